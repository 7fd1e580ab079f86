"""Coefficient profiles b(t), g(t) and the weights built from them.

A profile is one of a few registered families. Values and derivatives are
analytic; primitives are closed form where the family has one and a cached
cumulative Gauss-Legendre quadrature otherwise. Exponential weights are kept
in log space.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

OVERFLOW_CAP = 700.0

FAMILY_CODES = {"constant": 0, "power": 1, "exp": 2, "doubleexp": 3}

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)
_GL10_NODES, _GL10_WEIGHTS = np.polynomial.legendre.leggauss(10)


class ProfileError(ValueError):
    pass


def family_value(code, c, alpha, t, k):
    """k-th derivative (k = 0, 1, 2) of a registered family at t.

    Written with plain arithmetic and numpy ufuncs so the same source serves
    scalars inside compiled kernels and arrays in the numpy path.
    """
    if code == 0:
        if k == 0:
            return c + 0.0 * t
        return 0.0 * t
    if code == 1:
        if k == 0:
            return c * (1.0 + t) ** alpha
        if k == 1:
            return c * alpha * (1.0 + t) ** (alpha - 1.0)
        return c * alpha * (alpha - 1.0) * (1.0 + t) ** (alpha - 2.0)
    if code == 2:
        return c * alpha**k * np.exp(alpha * t)
    # doubleexp: c * exp(s * e^t), alpha holds the sign s
    with np.errstate(over="ignore"):  # overflow to inf is the honest value
        x = alpha * np.exp(t)
        v = c * np.exp(x)
    if k == 0:
        return v
    if k == 1:
        return v * x
    return v * (x + x * x)


def gauss_legendre(func: Callable, lo, hi, nodes=_GL_NODES, weights=_GL_WEIGHTS):
    """Fixed-order Gauss-Legendre rule on each interval [lo[i], hi[i]]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[..., None] + half[..., None] * nodes
    vals = func(pts)
    with np.errstate(invalid="ignore"):  # overflowed integrands give nan, handled by callers
        return half * np.sum(vals * weights, axis=-1)


def cumulative_quad(func: Callable, grid, rtol: float = 1e-12, atol: float = 0.0, max_depth: int = 40):
    """Cumulative integral of ``func`` from grid[0] to every grid node.

    Each interval is integrated with a 20-point rule and bisected until the
    10-point rule agrees within tolerance. ``func`` must accept arrays.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    if grid.size == 1:
        return np.zeros(1)
    lo = grid[:-1].copy()
    hi = grid[1:].copy()
    owner = np.arange(lo.size)
    piece = np.zeros(lo.size)
    # each sub-interval may spend its share of the owning interval's tolerance,
    # so negligible pieces (e.g. underflowed tails) are not refined forever
    density = None
    depth = 0
    while lo.size:
        with np.errstate(invalid="ignore"):  # non-finite pieces are accepted below
            fine = gauss_legendre(func, lo, hi)
            coarse = gauss_legendre(func, lo, hi, _GL10_NODES, _GL10_WEIGHTS)
            if density is None:
                density = np.abs(fine) / np.maximum(hi - lo, np.finfo(float).tiny)
            err = np.abs(fine - coarse)
        tol = rtol * np.maximum(np.abs(fine), density[owner] * (hi - lo)) + atol
        ok = (err <= tol) | (hi - lo <= 1e-14 * np.maximum(1.0, np.abs(hi))) | ~np.isfinite(err)
        if depth >= max_depth:
            ok[:] = True
        np.add.at(piece, owner[ok], fine[ok])
        bad = ~ok
        mid = 0.5 * (lo[bad] + hi[bad])
        lo, hi = np.concatenate([lo[bad], mid]), np.concatenate([mid, hi[bad]])
        owner = np.concatenate([owner[bad], owner[bad]])
        depth += 1
    return np.concatenate([[0.0], np.cumsum(piece)])


def adaptive_quad(func: Callable, a: float, b: float, rtol: float = 1e-12, atol: float = 0.0) -> float:
    return float(cumulative_quad(func, np.array([a, b]), rtol=rtol, atol=atol)[-1])


class _CumulativeCache:
    """Cumulative quadrature table for a primitive without closed form.

    Single-writer / multi-reader: extension happens under a lock and readers
    only ever see a fully built (immutable) table snapshot.
    """

    def __init__(self, func: Callable, panel: float = 1.0 / 64.0):
        self._func = func
        self._panel = panel
        self._lock = threading.Lock()
        self._table = (np.zeros(1), np.zeros(1))

    def _extend(self, t_max: float):
        with self._lock:
            nodes, cum = self._table
            if nodes[-1] >= t_max:
                return self._table
            n_new = int(math.ceil((t_max - nodes[-1]) / self._panel))
            new_nodes = nodes[-1] + self._panel * np.arange(1, n_new + 1)
            seg = cumulative_quad(self._func, np.concatenate([[nodes[-1]], new_nodes]))
            self._table = (np.concatenate([nodes, new_nodes]), np.concatenate([cum, cum[-1] + seg[1:]]))
            return self._table

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("primitive requested at negative time")
        nodes, cum = self._table
        t_max = float(np.max(t)) if t.size else 0.0
        if t_max > nodes[-1]:
            nodes, cum = self._extend(t_max)
        idx = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 1)
        left = nodes[idx]
        return cum[idx] + gauss_legendre(self._func, left, t)


@dataclass(frozen=True)
class CoefficientProfile:
    """A positive coefficient function of time from a registered family."""

    family: str
    params: dict
    code: int = field(repr=False)
    c: float = field(repr=False)
    alpha: float = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    @property
    def name(self) -> str:
        body = ", ".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))
        return f"{self.family}({body})"

    def deriv(self, t, k: int = 0):
        return family_value(self.code, self.c, self.alpha, np.asarray(t, dtype=float), k)

    def value(self, t):
        return self.deriv(t, 0)

    def d1(self, t):
        return self.deriv(t, 1)

    def d2(self, t):
        return self.deriv(t, 2)

    @property
    def is_zero(self) -> bool:
        return self.code == 0 and self.c == 0.0

    @property
    def primitive_closed_form(self) -> bool:
        return self.code != 3

    def primitive(self, t):
        """Integral of the profile over [0, t]."""
        t = np.asarray(t, dtype=float)
        c, a = self.c, self.alpha
        if self.code == 0:
            return c * t
        if self.code == 1:
            if a == -1.0:
                return c * np.log1p(t)
            return c * np.expm1((a + 1.0) * np.log1p(t)) / (a + 1.0)
        if self.code == 2:
            if a == 0.0:
                return c * t
            return c * np.expm1(a * t) / a
        return self._cached("primitive", self.value)(t)

    def recip_primitive(self, t):
        """Integral of 1/profile over [0, t]; inf for the zero profile."""
        t = np.asarray(t, dtype=float)
        c, a = self.c, self.alpha
        if self.code == 0:
            if c == 0.0:
                return np.where(t > 0, np.inf, 0.0)
            return t / c
        if self.code == 1:
            if a == 1.0:
                return np.log1p(t) / c
            return np.expm1((1.0 - a) * np.log1p(t)) / ((1.0 - a) * c)
        if self.code == 2:
            if a == 0.0:
                return t / c
            return -np.expm1(-a * t) / (a * c)
        return self._cached("recip", lambda s: 1.0 / self.value(s))(t)

    def _cached(self, key: str, func: Callable) -> _CumulativeCache:
        cache = self._cache.get(key)
        if cache is None:
            cache = self._cache.setdefault(key, _CumulativeCache(func))
        return cache

    def to_spec(self) -> dict:
        return {"family": self.family, **self.params}


def make_profile(family: str, params: dict | None = None) -> CoefficientProfile:
    """Build a profile from a family name and its parameters.

    Families: constant {c}, power {c, alpha} for c(1+t)^alpha,
    exp {c, alpha} for c e^(alpha t), doubleexp {c, sign} for c e^(sign e^t).
    """
    params = dict(params or {})
    if "α" in params:
        params["alpha"] = params.pop("α")
    if family not in FAMILY_CODES:
        raise ProfileError(f"unknown profile family {family!r}; known: {sorted(FAMILY_CODES)}")
    allowed = {"constant": {"c"}, "power": {"c", "alpha"}, "exp": {"c", "alpha"}, "doubleexp": {"c", "sign"}}[family]
    extra = set(params) - allowed
    if extra:
        raise ProfileError(f"unexpected parameters for {family}: {sorted(extra)}")
    c = params.get("c", 1.0)
    try:
        c = float(c)
    except (TypeError, ValueError) as exc:
        raise ProfileError(f"parameter c must be a real number, got {c!r}") from exc
    if not math.isfinite(c):
        raise ProfileError("parameter c must be finite")
    if family == "constant":
        # c = 0 is admitted so that b = 0 or g = 0 models can be expressed
        if c < 0:
            raise ProfileError("constant profile needs c >= 0")
        alpha = 0.0
        clean = {"c": c}
    elif family == "doubleexp":
        if c <= 0:
            raise ProfileError("doubleexp profile needs c > 0")
        sign = params.get("sign", 1)
        if sign in ("+", "plus"):
            sign = 1
        elif sign in ("-", "−", "minus"):
            sign = -1
        try:
            sign = float(sign)
        except (TypeError, ValueError) as exc:
            raise ProfileError(f"doubleexp sign must be +1 or -1, got {sign!r}") from exc
        if sign not in (1.0, -1.0):
            raise ProfileError(f"doubleexp sign must be +1 or -1, got {sign!r}")
        alpha = sign
        clean = {"c": c, "sign": int(sign)}
    else:
        if c <= 0:
            raise ProfileError(f"{family} profile needs c > 0")
        alpha = float(params.get("alpha", 0.0))
        if not math.isfinite(alpha):
            raise ProfileError("parameter alpha must be finite")
        clean = {"c": c, "alpha": alpha}
    return CoefficientProfile(family=family, params=clean, code=FAMILY_CODES[family], c=c, alpha=alpha)


def profile_from_spec(spec) -> CoefficientProfile:
    """Accept either a profile or a dict {"family": ..., params...}."""
    if isinstance(spec, CoefficientProfile):
        return spec
    if not isinstance(spec, dict) or "family" not in spec:
        raise ProfileError(f"profile spec must be a mapping with a 'family' key, got {spec!r}")
    params = {k: v for k, v in spec.items() if k != "family"}
    return make_profile(spec["family"], params)


ZERO = make_profile("constant", {"c": 0.0})


def big_G(g: CoefficientProfile, t):
    """G(t) = half the integral of g over [0, t]."""
    return 0.5 * g.primitive(t)


def big_B(b: CoefficientProfile, t):
    return b.primitive(t)


def log_delta(b: CoefficientProfile, g: CoefficientProfile, t, xi):
    """Integral of b + g xi^2 over [0, t], the log of delta(t, xi)."""
    xi = np.asarray(xi, dtype=float)
    return b.primitive(t) + 2.0 * big_G(g, t) * xi**2


def log_lambda(b: CoefficientProfile, g: CoefficientProfile, t, xi):
    return 0.5 * log_delta(b, g, t, xi)


def guarded_exp(log_value, cap: float = OVERFLOW_CAP):
    """exp(log_value) where it is below the cap, inf elsewhere."""
    log_value = np.asarray(log_value, dtype=float)
    out = np.full(log_value.shape, np.inf)
    ok = log_value <= cap
    out[ok] = np.exp(log_value[ok])
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class AuxWeights:
    b: CoefficientProfile
    g: CoefficientProfile
    cap: float = OVERFLOW_CAP

    def bigG(self, t):
        return big_G(self.g, t)

    def bigB(self, t):
        return big_B(self.b, t)

    def log_delta(self, t, xi):
        return log_delta(self.b, self.g, t, xi)

    def log_lambda(self, t, xi):
        return log_lambda(self.b, self.g, t, xi)

    def delta(self, t, xi):
        return guarded_exp(self.log_delta(t, xi), self.cap)

    def lambda_(self, t, xi):
        return guarded_exp(self.log_lambda(t, xi), self.cap)
