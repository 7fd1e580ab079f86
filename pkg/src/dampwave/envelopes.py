"""Auxiliary symbols, decay envelopes, per-mode bounds and pointwise inequality checks.

Everything that is only known up to a constant is compared in log space and
turned into an empirical constant: the supremum of observed / bound, which
must be finite and must not grow across the last two dyadic windows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import modes
from .coeffcalc import CoefficientProfile, big_G, cumulative_quad
from .classify import integral_test
from .zones import ZoneError, ZoneLayout, make_layout, region_of, zone_chain, zone_masks, zone_of, zone_grid

THEOREMS = ("T2.1", "T2.2", "T3.1", "T3.2", "T4.1", "T4.2", "T5.1", "T5.2", "T5.3", "T5.4")
STABILITY_FACTOR = 1.1
RADICAND_TOL = 1e-12
NEG_INF = -np.inf


class EnvelopeError(ValueError):
    pass


# ---------------------------------------------------------------- symbols

def _root(sq, scale):
    """sqrt where the radicand is positive beyond RADICAND_TOL * scale, NaN elsewhere."""
    sq = np.asarray(sq, dtype=float)
    ok = sq > RADICAND_TOL * np.abs(scale)
    return np.where(ok, np.sqrt(np.where(ok, sq, 0.0)), np.nan)


@dataclass(frozen=True)
class AuxSymbols:
    b: CoefficientProfile
    g: CoefficientProfile

    def _bg(self, t):
        t = np.asarray(t, dtype=float)
        return self.b.value(t), self.g.value(t)

    def d_sq(self, t, xi):
        _, g = self._bg(t)
        return g * g * xi**4 / 4.0 - xi * xi

    def d(self, t, xi):
        _, g = self._bg(t)
        return _root(self.d_sq(t, xi), g * g * xi**4 / 4.0)

    def d_t(self, t, xi):
        _, g = self._bg(t)
        return g * self.g.d1(t) * xi**4 / (4.0 * self.d(t, xi))

    def m_noneffective(self, t, xi):
        b, g = self._bg(t)
        return 0.5 * xi * xi * (self.g.d1(t) + b * g)

    def jbg_sq(self, t, xi):
        b, g = self._bg(t)
        return np.abs(xi * xi - (0.5 * (b + g * xi * xi)) ** 2)

    def jbg(self, t, xi):
        b, g = self._bg(t)
        return _root(self.jbg_sq(t, xi), (0.5 * (b + g * xi * xi)) ** 2 + xi * xi)

    def h_sq(self, t, xi):
        _, g = self._bg(t)
        return g * g * xi**4 / 4.0 - 0.75 * xi * xi

    def h(self, t, xi):
        _, g = self._bg(t)
        return _root(self.h_sq(t, xi), g * g * xi**4 / 4.0)

    def h_t(self, t, xi):
        _, g = self._bg(t)
        return g * self.g.d1(t) * xi**4 / (4.0 * self.h(t, xi))

    def p_sq(self, t, xi):
        b, g = self._bg(t)
        return 0.75 * xi * xi - b * b / 4.0 - g * g * xi**4 / 4.0

    def p(self, t, xi):
        return _root(self.p_sq(t, xi), 0.75 * xi * xi)

    def w_coefficient(self, t, xi):
        """Zero-order coefficient of the w-equation (real form)."""
        b, g = self._bg(t)
        x2 = xi * xi
        return (-x2 + b * g * x2 / 2.0 + g * g * x2 * x2 / 4.0 + self.g.d1(t) * x2 / 2.0
                + b * b / 4.0 + self.b.d1(t) / 2.0)

    def m_overdamping(self, t, xi):
        return self.w_coefficient(t, xi) - self.h_sq(t, xi)

    def gamma(self, kind: str, t, xi):
        b, g = self._bg(t)
        if kind == "scattering":
            return g * xi * xi / 2.0
        if kind in ("effective", "overdamping"):
            return 0.5 * (b + g * xi * xi)
        raise EnvelopeError(f"unknown micro-energy weight {kind!r}")

    def evaluate(self, name: str, t, xi):
        fn = {
            "d": self.d, "d_t": self.d_t, "m_noneffective": self.m_noneffective, "jbg": self.jbg,
            "h": self.h, "h_t": self.h_t, "p": self.p, "m_overdamping": self.m_overdamping,
        }.get(name)
        if fn is None:
            raise EnvelopeError(f"unknown symbol {name!r}")
        return fn(t, xi)


# --------------------------------------------------------- theorem envelopes

@dataclass(frozen=True)
class DataNorm:
    """A data seminorm: ``which`` in {u0, u1}; kind hom (|xi|^s), inhom (<xi>^s),
    bessel (|xi|^s <xi>^-2) or cap (max of orders s and s+1)."""
    which: str
    order: float
    kind: str = "hom"

    def label(self) -> str:
        return f"{self.which}:{self.kind}:{self.order:g}"


@dataclass
class EnvelopeTerm:
    factor: np.ndarray
    norms: tuple

    def to_dict(self) -> dict:
        return {"norms": [n.label() for n in self.norms]}


@dataclass
class Envelope:
    terms: list

    @property
    def factor(self) -> np.ndarray:
        """Time factor of a single-term envelope."""
        if len(self.terms) != 1:
            raise EnvelopeError("envelope has several terms; use .terms")
        return self.terms[0].factor

    def evaluate(self, norm_of) -> np.ndarray:
        """Sum of factor * (sum of data norms); ``norm_of(DataNorm)`` returns a float."""
        total = 0.0
        for term in self.terms:
            total = total + term.factor * sum(norm_of(n) for n in term.norms)
        return np.asarray(total, dtype=float)


def default_kappa(a: float, N2: float) -> float:
    return a / (2.0 * math.sqrt(1.0 - 4.0 / N2**2)) - a / 2.0


_FIXED_PAIRS = {
    "T5.2": ({"family": "exp", "c": 1.0, "alpha": 1.0}, {"family": "doubleexp", "c": 0.5, "sign": -1}),
    "T5.3": ({"family": "exp", "c": 1.0, "alpha": 1.0}, {"family": "exp", "c": 0.5, "alpha": -1.0}),
    "T5.4": ({"family": "doubleexp", "c": 1.0, "sign": 1}, {"family": "exp", "c": 2.0, "alpha": -1.0}),
}
_G_INCREASING = {"T2.1", "T3.1", "T4.1", "T5.1"}
_G_DECREASING = {"T2.2", "T3.2", "T4.2"}
_MIN_BETA = {"T2.1": 2, "T2.2": 2, "T3.1": 2, "T3.2": 2, "T4.1": 0, "T4.2": 1, "T5.1": 0,
             "T5.2": 1, "T5.3": 1, "T5.4": 2}
# Sobolev orders of the left-hand sides as offsets from beta: (u, u_t)
_LHS_OFFSETS = {"T2.1": (0, -2), "T3.1": (0, -2), "T2.2": (0, -1), "T3.2": (0, -1)}


@dataclass(frozen=True)
class EnvelopeSpec:
    theorem: str
    b: CoefficientProfile
    g: CoefficientProfile
    beta: float = 2.0
    a: float | None = None
    kappa: float | None = None
    b_branch: str | None = None  # "increasing" (b' >= 0) or "decreasing"
    t0: float = 0.0
    N2: float = 10.0

    def __post_init__(self):
        th = self.theorem
        if th not in THEOREMS:
            raise EnvelopeError(f"unknown theorem id {th!r}; expected one of {THEOREMS}")
        if not self.beta >= _MIN_BETA[th]:
            raise EnvelopeError(f"{th} needs |beta| >= {_MIN_BETA[th]}, got {self.beta}")
        if th in _FIXED_PAIRS:
            want_b, want_g = _FIXED_PAIRS[th]
            if _spec_key(self.b) != _spec_key(want_b) or _spec_key(self.g) != _spec_key(want_g):
                raise EnvelopeError(f"{th} is stated for b={want_b}, g={want_g} only")
        t = np.linspace(0.0, 10.0, 201)
        g1 = self.g.d1(t)
        if th in _G_INCREASING and not np.all(g1 > 0):
            raise EnvelopeError(f"{th} needs an increasing g")
        if th in _G_DECREASING and not np.all(g1 < 0):
            raise EnvelopeError(f"{th} needs a decreasing g")
        if th in ("T2.2", "T3.2"):
            if self.a is None or not 0 < self.a < 1:
                raise EnvelopeError(f"{th} needs a in (0, 1)")
            if self.kappa is not None and not self.kappa > 0:
                raise EnvelopeError(f"{th} needs kappa > 0")
        if self.b_branch not in (None, "increasing", "decreasing"):
            raise EnvelopeError("b_branch must be 'increasing' or 'decreasing'")

    @property
    def kappa_value(self) -> float:
        if self.kappa is not None:
            return self.kappa
        return default_kappa(self.a, self.N2)

    @property
    def branch(self) -> str:
        if self.b_branch is not None:
            return self.b_branch
        b1 = self.b.d1(np.linspace(0.0, 10.0, 201))
        return "increasing" if np.all(b1 >= 0) else "decreasing"

    def lhs_orders(self) -> tuple[float, float]:
        du, dut = _LHS_OFFSETS.get(self.theorem, (0, 0))
        return self.beta + du, self.beta + dut

    def to_dict(self) -> dict:
        out = {"theorem": self.theorem, "beta": self.beta, "t0": self.t0, "b_branch": self.branch}
        if self.theorem in ("T2.2", "T3.2"):
            out.update(a=self.a, kappa=self.kappa_value)
        return out


def _spec_key(spec) -> tuple:
    d = spec.to_spec() if isinstance(spec, CoefficientProfile) else dict(spec)
    return tuple(sorted((k, float(v) if not isinstance(v, str) else v) for k, v in d.items()))


def _pair(u0: DataNorm, u1: DataNorm) -> tuple:
    return (u0, u1)


def theorem_envelope(spec: EnvelopeSpec, t) -> tuple[Envelope, Envelope]:
    """Time factors and data norms of the right-hand sides for u and u_t."""
    t = np.asarray(t, dtype=float)
    th, beta = spec.theorem, spec.beta
    one = np.ones_like(t)
    b, g = spec.b, spec.g
    H = lambda w, s, kind="hom": DataNorm(w, s, kind)  # noqa: E731

    if th in ("T4.2", "T5.2") and np.any(t < spec.t0):
        raise EnvelopeError(f"{th} holds for t >= t0 = {spec.t0}")

    if th in ("T2.1", "T3.1"):
        data = _pair(H("u0", beta), H("u1", beta - 2))
        return Envelope([EnvelopeTerm(one, data)]), Envelope([EnvelopeTerm(g.value(t), data)])
    if th in ("T2.2", "T3.2"):
        s = beta + spec.kappa_value + spec.a / 2.0
        data = _pair(H("u0", s), H("u1", s - 2))
        fac = one if th == "T2.2" else np.exp(-0.5 * b.primitive(t))
        return Envelope([EnvelopeTerm(fac, data)]), Envelope([EnvelopeTerm(fac.copy(), data)])
    if th in ("T4.1", "T5.1"):
        low = _pair(H("u0", beta), H("u1", beta, "bessel"))
        env_u = Envelope([EnvelopeTerm(one, low)])
        if th == "T5.1" or spec.branch == "increasing":
            high = _pair(H("u0", beta + 2), H("u1", beta + 2, "bessel"))
            env_ut = Envelope([EnvelopeTerm(g.value(t), high), EnvelopeTerm(b.value(t), low)])
        else:
            high = _pair(H("u0", beta + 2), H("u1", beta))
            env_ut = Envelope([EnvelopeTerm(g.value(t), high),
                               EnvelopeTerm(b.value(t), _pair(H("u0", beta), H("u1", beta - 2)))])
        return env_u, env_ut
    if th == "T4.2":
        F = 1.0 + (b.recip_primitive(t) - b.recip_primitive(spec.t0))
        env_u = Envelope([EnvelopeTerm(F ** (-beta / 2.0), (H("u0", beta, "inhom"),)),
                          EnvelopeTerm(F ** (-(beta - 1) / 2.0), (H("u1", beta - 1, "inhom"),))])
        env_ut = Envelope([EnvelopeTerm(F ** (-(beta + 1) / 2.0), (H("u0", beta + 1, "inhom"),)),
                           EnvelopeTerm(F ** (-beta / 2.0), (H("u1", beta, "inhom"),))])
        return env_u, env_ut
    if th == "T5.2":
        env_u = Envelope([EnvelopeTerm(one, _pair(H("u0", beta, "inhom"), H("u1", beta - 1, "inhom")))])
        env_ut = Envelope([EnvelopeTerm(one.copy(), _pair(H("u0", beta + 1, "inhom"), H("u1", beta, "inhom")))])
        return env_u, env_ut
    if th == "T5.3":
        env_u = Envelope([EnvelopeTerm(one, _pair(H("u0", beta, "cap"), H("u1", beta - 1, "cap")))])
        env_ut = Envelope([EnvelopeTerm(one.copy(), _pair(H("u0", beta + 1, "cap"), H("u1", beta, "cap")))])
        return env_u, env_ut
    # T5.4
    low = _pair(H("u0", beta), H("u1", beta - 2))
    env_u = Envelope([EnvelopeTerm(one, low)])
    env_ut = Envelope([EnvelopeTerm(b.value(t), low),
                       EnvelopeTerm(g.value(t), _pair(H("u0", beta + 2), H("u1", beta)))])
    return env_u, env_ut


# ---------------------------------------------------------- per-zone bounds

@dataclass(frozen=True)
class BoundInfo:
    family: str
    zone: str
    weight: str  # micro-energy of the compared fundamental matrix


BOUNDS = {
    "ell_scattering": BoundInfo("TwoZone", "Zell", "v_scattering"),
    "pd_scattering": BoundInfo("TwoZone", "Zpd", "gxi2_half"),
    "hyp_noneffective": BoundInfo("FourZoneNonEffective", "Zhyp", "xi"),
    "diss_noneffective": BoundInfo("FourZoneNonEffective", "Zdiss", "n1_over_1pt"),
}


def _damping(b, g, xi, s, t):
    return modes.damping_integral(b, g, xi, s, t)


def mode_bound(bound_id: str, b: CoefficientProfile, g: CoefficientProfile, xi: float, s: float, t,
               layout: ZoneLayout | None = None, eps: float | None = None):
    """Log of the per-zone bound for the entries of the micro-energy fundamental matrix.

    With a layout, (s, xi) and every (t, xi) must lie in the bound's zone.
    """
    if bound_id not in BOUNDS:
        raise EnvelopeError(f"unknown bound id {bound_id!r}; expected one of {sorted(BOUNDS)}")
    info = BOUNDS[bound_id]
    t = np.asarray(t, dtype=float)
    if np.any(t < s):
        raise EnvelopeError("mode bounds need s <= t")
    if layout is not None:
        if layout.family != info.family:
            raise EnvelopeError(f"{bound_id} lives in the {info.family} layout, not {layout.family}")
        pts = np.concatenate([[s], np.atleast_1d(t)])
        tags = [zone_of(layout, float(p), xi) for p in pts]
        bad = [float(p) for p, z in zip(pts, tags) if z != info.zone]
        if bad:
            raise EnvelopeError(f"{bound_id}: points t={bad[:3]} are outside {info.zone} for xi={xi:g}")
    if eps is None:
        eps = layout.c("eps") if layout is not None and "eps" in layout.constants else 0.1
    if bound_id == "pd_scattering":
        return np.log(g.value(t) / g.value(s))
    if bound_id == "ell_scattering":
        return np.log(g.value(t) / g.value(s)) + xi * xi * (big_G(g, t) - big_G(g, s))
    if bound_id == "hyp_noneffective":
        return -(2.0 - eps) / 4.0 * _damping(b, g, xi, s, t)
    return -_damping(b, g, xi, s, t)


def micro_energy_log_entries(bound_id: str, fm: modes.FundamentalMatrix, b: CoefficientProfile,
                             g: CoefficientProfile, N1: float = 10.0) -> np.ndarray:
    """log |entries| of the micro-energy fundamental matrix built from E(t, s, xi) of (u, u_t)."""
    info = BOUNDS[bound_id]
    t, s, xi = fm.t_grid, fm.s, fm.xi
    E = fm.entries
    with np.errstate(divide="ignore"):
        if info.weight == "v_scattering":
            # (g xi^2/2 v, D_t v) with v = e^{xi^2 G} u: L(t) = [[c, 0], [c, 1]], c = g xi^2 / 2
            ct = g.value(t) * xi * xi / 2.0
            cs = float(g.value(s)) * xi * xi / 2.0
            Lt = np.zeros((t.size, 2, 2))
            Lt[:, 0, 0] = ct
            Lt[:, 1, 0] = ct
            Lt[:, 1, 1] = 1.0
            Ls_inv = np.array([[1.0 / cs, 0.0], [-1.0, 1.0]])
            M = Lt @ E @ Ls_inv
            return np.log(np.abs(M)) + (xi * xi * (big_G(g, t) - big_G(g, s)))[:, None, None]
        if info.weight == "gxi2_half":
            gt, gs = g.value(t) * xi * xi / 2.0, float(g.value(s)) * xi * xi / 2.0
        elif info.weight == "xi":
            gt, gs = np.full(t.shape, xi), xi
        else:
            gt, gs = N1 / (1.0 + t), N1 / (1.0 + s)
        out = np.empty_like(E)
        out[:, 0, 0] = np.log(np.abs(E[:, 0, 0]) * gt / gs)
        out[:, 0, 1] = np.log(np.abs(E[:, 0, 1]) * gt)
        out[:, 1, 0] = np.log(np.abs(E[:, 1, 0]) / gs)
        out[:, 1, 1] = np.log(np.abs(E[:, 1, 1]))
        return out


@dataclass
class BoundCheck:
    bound_id: str
    xis: list
    samples: int
    constant: float  # sup of observed / bound
    window_prev: float
    window_last: float
    verdict: str
    detail: str = ""
    log_ratio_max: list = field(default_factory=list, repr=False)  # per xi

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "id": self.bound_id, "xis": [float(x) for x in self.xis], "samples": self.samples,
            "constant": _num(self.constant), "window_prev": _num(self.window_prev),
            "window_last": _num(self.window_last), "verdict": self.verdict, "detail": self.detail,
        }


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def window_verdict(elapsed, log_ratio, factor: float = STABILITY_FACTOR):
    """(C, C_prev, C_last, verdict): sups over all, (H/4, H/2] and (H/2, H] of the elapsed time."""
    elapsed = np.asarray(elapsed, dtype=float)
    log_ratio = np.asarray(log_ratio, dtype=float)
    H = float(np.max(elapsed)) if elapsed.size else 0.0
    if elapsed.size == 0 or H <= 0:
        return math.nan, math.nan, math.nan, "fail"
    if np.any(np.isnan(log_ratio)) or np.any(log_ratio == np.inf):
        return math.inf, math.nan, math.nan, "fail"
    prev = (elapsed > H / 4) & (elapsed <= H / 2)
    last = elapsed > H / 2
    C = float(np.exp(np.max(log_ratio)))
    c_prev = float(np.exp(np.max(log_ratio[prev]))) if np.any(prev) else math.nan
    c_last = float(np.exp(np.max(log_ratio[last]))) if np.any(last) else math.nan
    ok = math.isfinite(C) and math.isfinite(c_prev) and math.isfinite(c_last) and c_last <= factor * c_prev
    return C, c_prev, c_last, "pass" if ok else "fail"


def bound_check(bound_id: str, layout: ZoneLayout, xis, horizon: float | None = None, s_fractions=(0.0, 0.25),
                points: int = 257, rel_tol: float = 1e-8, backend: str | None = None) -> BoundCheck:
    """Empirical constant of a per-zone bound over (s, t) grids in its zone."""
    info = BOUNDS.get(bound_id)
    if info is None:
        raise EnvelopeError(f"unknown bound id {bound_id!r}")
    if layout.family != info.family:
        raise EnvelopeError(f"{bound_id} needs a {info.family} layout")
    horizon = layout.t_max if horizon is None else min(horizon, layout.t_max)
    N1 = layout.constants.get("N1", 10.0)
    elapsed_all, ratio_all, used, per_xi = [], [], [], []
    for xi in xis:
        iv = next((iv for iv in zone_chain(layout, xi) if iv.zone == info.zone), None)
        if iv is None:
            continue
        lo, hi = iv.start, min(iv.end, horizon)
        # keep clear of the separating times where the zone test is ambiguous
        pad = 1e-6 * max(1.0, hi)
        lo, hi = lo + pad, hi - pad
        if hi - lo <= 1e-3:
            continue
        used.append(float(xi))
        worst = -np.inf
        for frac in s_fractions:
            s = lo + frac * (hi - lo)
            tg = np.linspace(s, hi, points)
            fm = modes.fundamental_matrix(layout.b, layout.g, xi, s, tg, rel_tol=rel_tol, theta=0.0,
                                          backend=backend)
            logE = micro_energy_log_entries(bound_id, fm, layout.b, layout.g, N1)
            bound = mode_bound(bound_id, layout.b, layout.g, xi, s, tg, eps=layout.constants.get("eps"))
            lr = np.max(logE, axis=(1, 2)) - bound
            elapsed_all.append((tg - s)[1:] / (hi - s) if hi > s else tg[1:])
            ratio_all.append(lr[1:])
            worst = max(worst, float(np.max(lr)))
        per_xi.append(worst)
    if not used:
        return BoundCheck(bound_id, [], 0, math.nan, math.nan, math.nan, "fail", "no xi has a usable zone interval")
    el = np.concatenate(elapsed_all)
    lr = np.concatenate(ratio_all)
    C, cp, cl, verdict = window_verdict(el, lr)
    detail = f"sup ratio {C:.4g}; windows {cp:.4g} -> {cl:.4g}"
    return BoundCheck(bound_id, used, int(lr.size), C, cp, cl, verdict, detail, per_xi)


# --------------------------------------------------------------- gluing

def _logmatmul(A, B):
    """Log-space product of nonnegative matrices: A (..., 2, 2), B (..., 2, 2)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return np.logaddexp(A[..., :, 0, None] + B[..., None, 0, :], A[..., :, 1, None] + B[..., None, 1, :])


def _mat(uu, uv, vu, vv):
    uu, uv, vu, vv = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (uu, uv, vu, vv)))
    out = np.empty(uu.shape + (2, 2))
    out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = uu, uv, vu, vv
    return out


def _hyp_like(F, lx):
    return _mat(F, F - lx, F + lx, F)


@dataclass
class GluedEnvelope:
    xi: float
    beta: float
    t: np.ndarray
    log_coeff: np.ndarray  # (T, 2, 2): rows (u, u_t), columns (|u0|, |u1|), scaled by xi^beta
    chain: list

    def log_bound(self, u0: float, u1: float):
        """(log env of xi^beta |u|, log env of xi^beta |u_t|) for mode data (u0, u1)."""
        with np.errstate(divide="ignore"):
            d = np.log(np.abs(np.array([u0, u1], dtype=float)))
        base = self.beta * math.log(self.xi)
        rows = np.logaddexp(self.log_coeff[:, :, 0] + d[0], self.log_coeff[:, :, 1] + d[1])
        return base + rows[:, 0], base + rows[:, 1]


def _transfers(spec: EnvelopeSpec, layout: ZoneLayout, xi: float, constants: dict):
    """Zone -> transfer(s, t) giving log coefficients from (X(s)) to X(t), X = xi^beta (|u|, |u_t|)."""
    b, g = spec.b, spec.g
    lx = math.log(xi)
    x2 = xi * xi
    th = spec.theorem

    def damp(s, t):
        return _damping(b, g, xi, s, t)

    def bint(s, t):
        return b.primitive(t) - b.primitive(s)

    energy = lambda s, t: _hyp_like(np.zeros_like(t), lx)  # noqa: E731
    if th == "T2.2":
        raise EnvelopeError("gluing is not available for T2.2: only the final estimate is stated")
    if th in ("T2.1", "T3.1"):
        def pd(s, t):
            lg = np.log(g.value(t) / g.value(s))
            return _mat(np.zeros_like(t), -np.log(g.value(s) * x2 / 2.0) + 0 * t,
                        lg + np.log(g.value(s) * x2 / 2.0), lg)

        def ell(s, t):
            return _mat(np.zeros_like(t), -np.log(g.value(s) * x2) + 0 * t, np.log(g.value(t) * x2),
                        np.log(g.value(t) / g.value(s)))
        return {"Zpd": pd, "Zell": ell}, ell, energy
    if th in ("T4.1", "T5.1"):
        inc = th == "T5.1" or spec.branch == "increasing"

        def pd(s, t):
            if s != 0.0:
                raise EnvelopeError("pseudo-differential estimate is stated from t = 0 only")
            low = -math.log1p(x2) if inc else -2.0 * lx
            lp = np.log(b.value(t) + g.value(t) * x2)
            return _mat(np.zeros_like(t), low + 0 * t, lp, low + lp)

        def ell(s, t):
            ps = float(b.value(s) + g.value(s) * x2)
            pt = b.value(t) + g.value(t) * x2
            return _mat(np.zeros_like(t), -math.log(ps) + 0 * t, np.log(pt), np.log(pt / ps))
        return {"Zpd": pd, "Zell": ell}, ell, energy
    if th == "T3.2":
        kap, a = spec.kappa_value, spec.a
        eps = layout.c("eps")

        def ell(s, t):
            gs, gt = float(g.value(s)), g.value(t)
            logR = (kap + a / 2.0 - 1.0) * np.log(gs / gt) - 0.5 * bint(s, t)
            return _mat(math.log(2.0) + logR + np.log(gs / gt), math.log(2.0) + logR - np.log(gt) - 2 * lx,
                        logR + math.log(gs) + 2 * lx, logR)

        def hyp(s, t):
            return _hyp_like(-(2.0 - eps) / 4.0 * damp(s, t), lx)

        def diss(s, t):
            d = -damp(s, t)
            return _mat(d - lx, d - lx, d, d)
        return {"Zell": ell, "Zred": energy, "Zhyp": hyp, "Zdiss": diss}, ell, hyp
    if th == "T5.3":
        CN, Cd = constants.get("C_N", 0.0), constants.get("C", 0.0)

        def ell(s, t):
            F = -CN * bint(s, t)
            return _mat(F + lx, F, F + 2 * lx, F + lx)

        def hyp(s, t):
            return _hyp_like(-0.5 * damp(s, t), lx)

        def diss(s, t):
            return _hyp_like(-Cd * bint(s, t), lx)
        return {"Zell": ell, "Zred1": energy, "Zred2": energy, "Zhyp": hyp, "Zdiss": diss}, ell, hyp
    if th in ("T4.2", "T5.2"):
        C, C1, C2 = constants.get("C", 0.0), constants.get("C1", 0.0), constants.get("C2", 0.0)

        def par(s, t):
            grid = np.concatenate([[s], np.atleast_1d(t)])
            vals = cumulative_quad(lambda r: 1.0 / (b.value(r) + g.value(r) * x2), np.sort(grid))
            order = np.argsort(grid)
            cum = np.empty_like(vals)
            cum[order] = vals
            return _hyp_like(-C * x2 * cum[1:].reshape(np.shape(t)), lx)

        def hyp(s, t):
            return _hyp_like(-0.5 * damp(s, t), lx)

        def diss(s, t):
            F = -C1 * x2 * (b.recip_primitive(t) - b.recip_primitive(s))
            if C2:
                F = np.minimum(F, -C2 * bint(s, t))
            return _hyp_like(F, lx)
        return {"Zell": par, "Zred": par, "Zhyp": hyp, "Zdiss": diss}, par, hyp
    # T5.4: one elliptic zone, estimate from t = 0
    def single(s, t):
        if s != 0.0:
            raise EnvelopeError("uniformly elliptic estimate is stated from t = 0 only")
        bt, gt = b.value(t), g.value(t)
        return _mat(np.zeros_like(t), -2 * lx + 0 * t, np.log(bt + gt * x2), np.log(bt / x2 + gt))
    return {"Zell": single}, single, single


def glue_mode_envelope(spec: EnvelopeSpec, layout: ZoneLayout, xi: float, t,
                       constants: dict | None = None) -> GluedEnvelope:
    """Compose the per-zone estimates along the zone chain of xi.

    Gap intervals are cut where the region changes; pieces in Pi_ell use the
    elliptic estimate, the rest the hyperbolic one.
    """
    if not xi > 0:
        raise EnvelopeError("xi must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > layout.t_max * (1 + 1e-12)):
        raise EnvelopeError(f"t must lie in [0, {layout.t_max}]")
    table, ell_fb, hyp_fb = _transfers(spec, layout, xi, dict(constants or {}))
    chain = zone_chain(layout, xi)
    K = np.array([[0.0, NEG_INF], [NEG_INF, 0.0]])
    out = np.full(t.shape + (2, 2), np.nan)
    pieces = []
    for iv in chain:
        fn = table.get(iv.zone)
        if fn is not None:
            pieces.append((iv.start, iv.end, fn))
            continue
        if not iv.is_gap:
            raise EnvelopeError(f"no estimate for zone {iv.zone} under {spec.theorem}")
        cuts = [iv.start] + _region_changes(spec.b, spec.g, xi, iv.start, iv.end) + [iv.end]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            region = region_of(spec.b, spec.g, 0.5 * (lo + hi), xi)
            pieces.append((lo, hi, ell_fb if region == "PiEll" else hyp_fb))
    for lo, hi, fn in pieces:
        sel = (t >= lo) & (t <= hi)
        if np.any(sel):
            out[sel] = _logmatmul(fn(lo, t[sel]), K)
        K = _logmatmul(fn(lo, np.array([hi])), K)[0]
    return GluedEnvelope(float(xi), spec.beta, t, out, chain)


def _region_changes(b, g, xi, lo, hi, samples: int = 513) -> list:
    """Times in (lo, hi) where xi - (b + g xi^2)/2 changes sign."""
    def r(s):
        return xi - 0.5 * (b.value(s) + g.value(s) * xi * xi)

    ts = np.linspace(lo, hi, samples)
    vals = r(ts)
    out = []
    for k in np.nonzero(np.sign(vals[1:]) != np.sign(vals[:-1]))[0]:
        a, c = ts[k], ts[k + 1]
        ra = vals[k]
        while c - a > 1e-10:
            m = 0.5 * (a + c)
            if np.sign(r(m)) == np.sign(ra):
                a = m
            else:
                c = m
        mid = 0.5 * (a + c)
        if lo < mid < hi:
            out.append(float(mid))
    return out


# --------------------------------------------------- pointwise inequalities

@dataclass
class InequalityResult:
    ineq_id: str
    zone: str
    points: int
    max_violation: float
    value: float | None = None

    @property
    def passed(self) -> bool:
        return self.max_violation == 0.0

    def to_dict(self) -> dict:
        out = {"id": self.ineq_id, "zone": self.zone, "points": self.points,
               "max_violation": float(self.max_violation)}
        if self.value is not None:
            out["value"] = float(self.value)
        return out


INEQUALITIES = {
    "FourZoneNonEffective": ("d_lower", "d_upper", "d_t_bound", "m_over_d_sign"),
    "EffectiveDecaying": ("effective_backtransform", "jbg_lower", "jbg_upper"),
    "FiveZoneOverdamping": ("overdamping_backtransform", "h_lower", "h_upper", "h_t_bound",
                            "p_lower", "p_upper", "p_constant"),
}


def f_kappa(kappa: float) -> float:
    """Constant subtracted from 3/4 in the lower bound for p^2 when eps1 = 1 + kappa, eps2 = 1 - kappa."""
    return 1.0 / (16.0 * (1.0 - kappa) ** 2) + (1.0 + kappa) ** 2 / 4.0


def _sqrt_gap(x, y):
    """sqrt(x^2 - y) - x + y/(2x) written without cancellation (always <= 0 for 0 < y <= x^2)."""
    r = np.sqrt(np.maximum(x * x - y, 0.0))
    return -(y * y) / (2.0 * x * (x + r) ** 2)


def _residuals(family: str, layout: ZoneLayout, t, xi) -> dict:
    """Inequality id -> (zone, LHS - RHS) on the zone points (t, xi)."""
    b, g = layout.b.value(t), layout.g.value(t)
    g1 = layout.g.d1(t)
    x2 = xi * xi
    sym = AuxSymbols(layout.b, layout.g)
    if family == "FourZoneNonEffective":
        N2 = layout.c("N2")
        d = np.sqrt(np.maximum(sym.d_sq(t, xi), 0.0))
        gxn = g * xi / N2
        return {
            "d_lower": x2 * (1.0 - gxn) * (1.0 + gxn),
            "d_upper": -x2,
            "d_t_bound": np.abs(g * g1 * xi**4 / (4.0 * d)) - (-g1) * x2 / (2.0 * math.sqrt(1.0 - 4.0 / N2**2)),
            "m_over_d_sign": sym.m_noneffective(t, xi) / d,
        }
    if family == "EffectiveDecaying":
        N = layout.c("N")
        half = 0.5 * (b + g * x2)
        return {
            "effective_backtransform": _sqrt_gap(half, x2),
            "jbg_lower": x2 - 4.0 * half * half / N**2,
            "jbg_upper": -x2,
        }
    # FiveZoneOverdamping, elliptic zone part
    N = layout.c("N")
    half = 0.5 * g * x2
    h = np.sqrt(np.maximum(sym.h_sq(t, xi), 0.0))
    gxn = g * xi / N
    return {
        "overdamping_backtransform": _sqrt_gap(half, 0.75 * x2),
        "h_lower": 0.75 * x2 * (1.0 - gxn) * (1.0 + gxn),
        "h_upper": -0.75 * x2,
        "h_t_bound": np.abs(g * g1 * xi**4 / (4.0 * h)) - np.abs(g1) * x2 / (2.0 * math.sqrt(1.0 - 3.0 / N**2)),
    }


def _p_residuals(layout: ZoneLayout, t, xi) -> dict:
    b, g = layout.b.value(t), layout.g.value(t)
    e1, e2 = layout.c("eps1"), layout.c("eps2")
    x2 = xi * xi
    p2 = 0.75 * x2 - b * b / 4.0 - g * g * x2 * x2 / 4.0
    low = (0.75 - 1.0 / (16.0 * e2**2) - e1**2 / 4.0) * x2
    return {"p_lower": low - p2, "p_upper": -b * b / 4.0 - g * g * x2 * x2 / 4.0}


def _dense_zone_grid(layout: ZoneLayout, zone: str, target: int, xi_range):
    t_pts, x_pts = 200, 500
    ts, xs = zone_grid(layout, zone, xi_range, target, t_pts, x_pts)
    while ts.size < target and t_pts < 3200:
        t_pts, x_pts = 2 * t_pts, 2 * x_pts
        ts, xs = zone_grid(layout, zone, xi_range, target, t_pts, x_pts)
    return ts, xs


def pointwise_inequality_suite(layout: ZoneLayout, grid=None, points: int = 10_000,
                               xi_range=(1e-3, 1e6), kappa: float = 0.1) -> list[InequalityResult]:
    """max(LHS - RHS, 0) of every pointwise inequality of the layout on zone grids.

    ``grid`` may map a zone tag to (t, xi) arrays; otherwise lattice points
    inside each zone are drawn. Points outside the zone are discarded.
    """
    fam = layout.family
    if fam not in INEQUALITIES:
        return []

    def pts(zone):
        if grid is not None and zone in grid:
            t, x = (np.asarray(a, dtype=float) for a in grid[zone])
            keep = zone_masks(layout, t, x).get(zone, np.zeros(t.shape, dtype=bool))
            return t[keep], x[keep]
        return _dense_zone_grid(layout, zone, points, xi_range)

    out = []

    def add(zone, res):
        for iid, r in res.items():
            r = np.asarray(r, dtype=float)
            viol = float(np.max(np.maximum(r, 0.0))) if r.size else 0.0
            if r.size and np.any(np.isnan(r)):
                viol = math.inf
            out.append(InequalityResult(iid, zone, int(r.size), viol))

    t, x = pts("Zell")
    add("Zell", _residuals(fam, layout, t, x) if t.size else {k: np.zeros(0) for k in
                                                               INEQUALITIES[fam] if not k.startswith("p_")})
    if fam == "FiveZoneOverdamping":
        t, x = pts("Zhyp")
        add("Zhyp", _p_residuals(layout, t, x) if t.size else {"p_lower": np.zeros(0), "p_upper": np.zeros(0)})
        fk = f_kappa(kappa)
        out.append(InequalityResult("p_constant", "Zhyp", 1, max(fk - 0.75, 0.0), fk))
    return out


# ------------------------------------------------------ symbol integrability

SYMBOL_CHECKS = ("pd_remainder", "ell_remainder")


@dataclass
class SymbolIntegral:
    check_id: str
    xi: float
    N: float
    interval: tuple
    value: float
    converges: bool
    rule: str

    def to_dict(self) -> dict:
        return {"id": self.check_id, "xi": self.xi, "N": self.N, "interval": list(self.interval),
                "value": _num(self.value), "converges": self.converges, "rule": self.rule}


def _with_constant(layout: ZoneLayout, name: str, value: float) -> ZoneLayout:
    consts = dict(layout.constants)
    consts[name] = float(value)
    extra = {"t0": layout.t0} if layout.t0 is not None else {}
    return make_layout(layout.family, layout.b, layout.g, layout.t_max, **consts, **extra)


def symbol_integrability(check_id: str, layout: ZoneLayout, xi: float, N: float | None = None) -> SymbolIntegral:
    """Integral of a remainder integrand over the zone interval of xi."""
    if check_id not in SYMBOL_CHECKS:
        raise EnvelopeError(f"unknown symbol check {check_id!r}; expected one of {SYMBOL_CHECKS}")
    b, g = layout.b, layout.g
    x2 = xi * xi
    if check_id == "pd_remainder":
        if layout.family != "TwoZone":
            raise EnvelopeError("pd_remainder needs the TwoZone layout")
        lay = layout if N is None else _with_constant(layout, "N", N)
        N = lay.c("N")

        def f(r):
            G = big_G(g, r)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                v = g.value(r) / (G * G) / x2
            return np.where(np.isfinite(v), v, 0.0)
        zone = "Zell"
    else:
        if layout.family != "EffectiveDecaying":
            raise EnvelopeError("ell_remainder needs the EffectiveDecaying layout")
        lay = layout if N is None else _with_constant(layout, "N", N)
        N = lay.c("N")

        def f(r):
            num = b.d1(r) + g.d1(r) * x2
            den = b.value(r) + g.value(r) * x2
            return num * num / den**3
        zone = "Zell"
    ivs = [iv for iv in zone_chain(lay, xi) if iv.zone == zone]
    if not ivs:
        raise EnvelopeError(f"{check_id}: zone {zone} is empty for xi={xi:g}, N={N:g}")
    total, converges, rule = 0.0, True, "finite interval"
    for iv in ivs:
        if iv.end < lay.t_max:
            total += float(cumulative_quad(f, np.array([iv.start, iv.end]))[-1])
            continue
        # open-ended interval: dyadic tail test relative to its start
        start = iv.start
        span = lay.t_max - start
        pts_rel = np.array([0.0, span / 8, span / 4, span / 2, span])
        cum = cumulative_quad(f, start + pts_rel)
        table = dict(zip(pts_rel[1:], cum[1:]))
        res = integral_test(lambda s: np.array([table[float(v)] for v in np.atleast_1d(s)]), span)
        if res.converges is not True:
            converges = False
        rule = res.rule
        total += res.total + (res.remainder_estimate if res.converges else 0.0)
    first = ivs[0]
    return SymbolIntegral(check_id, float(xi), float(N), (first.start, ivs[-1].end), total, converges, rule)


# ------------------------------------------------------------ multipliers

MULTIPLIERS = ("xi2_over_b", "b")


def _k_values(K_id, b, b1, xi):
    if K_id == "xi2_over_b":
        return xi * xi / b, -xi * xi * b1 / (b * b)
    if K_id == "b":
        return b, b1
    if K_id == "zero":
        return np.zeros_like(b), np.zeros_like(b)
    raise EnvelopeError(f"unknown multiplier {K_id!r}; expected one of {MULTIPLIERS}")


def sub_zone_mask(layout: ZoneLayout, K_id: str, t, xi, eps: float = 0.1):
    """Points of the dissipative zone inside the elliptic (K = xi^2/b) or reduced (K = b) sub-zone."""
    b = layout.b.value(t)
    edge = 0.5 * b * math.sqrt(1.0 - eps * eps)
    diss = zone_masks(layout, t, xi)["Zdiss"]
    if K_id in ("xi2_over_b", "zero"):
        return diss & (xi <= edge)
    return diss & (xi >= edge) & (xi <= 0.5 * b)


@dataclass
class MultiplierFit:
    K_id: str
    points: int
    lambdas: tuple
    reference_lambda1: float
    verdict: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"id": self.K_id, "points": self.points, "lambda1": _num(self.lambdas[0]),
                "lambda2": _num(self.lambdas[1]), "lambda3": _num(self.lambdas[2]),
                "reference_lambda1": self.reference_lambda1, "verdict": self.verdict, "detail": self.detail}


def multiplier_grid(layout: ZoneLayout, K_id: str, eps: float = 0.1, t_points: int = 400, xi_points: int = 64):
    """(t, xi) points of the sub-zone; the sub-zone edge xi = (b/2) sqrt(1 - eps^2) is always included."""
    t = np.linspace(0.0, layout.t_max, t_points)
    b = layout.b.value(t)
    edge = 0.5 * b * math.sqrt(1.0 - eps * eps)
    if K_id == "b":
        q = np.linspace(math.sqrt(1.0 - eps * eps), 1.0, xi_points)
        X = 0.5 * b[:, None] * q[None, :]
        X[:, 0] = edge
    else:
        q = np.geomspace(1e-3, 1.0, xi_points)
        X = edge[:, None] * q[None, :]
        X[:, -1] = edge
    T = np.broadcast_to(t[:, None], X.shape)
    keep = sub_zone_mask(layout, K_id, T, X, eps)
    return T[keep], X[keep]


def multiplier_check(K_id: str, layout: ZoneLayout, grid=None, eps: float = 0.1) -> MultiplierFit:
    """Fit the smallest constants with K <= l1 b~, b~ K <= l2 xi^2, (K')^2 <= l3 b~ K xi^2, b~ = b + g xi^2."""
    if K_id not in MULTIPLIERS:
        raise EnvelopeError(f"unknown multiplier {K_id!r}; expected one of {MULTIPLIERS}")
    if layout.family != "EffectiveDecaying":
        raise EnvelopeError("multiplier checks need the EffectiveDecaying layout")
    if grid is None:
        t, xi = multiplier_grid(layout, K_id, eps)
    else:
        t, xi = (np.asarray(a, dtype=float) for a in grid)
        keep = sub_zone_mask(layout, K_id, t, xi, eps)
        t, xi = t[keep], xi[keep]
    if t.size == 0:
        raise EnvelopeError(f"multiplier {K_id}: no grid point lies in the sub-zone")
    b, g, b1 = layout.b.value(t), layout.g.value(t), layout.b.d1(t)
    bt = b + g * xi * xi
    K, K1 = _k_values(K_id, b, b1, xi)
    l1 = float(np.max(K / bt))
    l2 = float(np.max(bt * K / (xi * xi)))
    l3 = float(np.max(K1 * K1 / (bt * K * xi * xi)))
    ref = (1.0 - eps * eps) / 4.0 if K_id == "xi2_over_b" else 1.0
    finite = all(math.isfinite(v) for v in (l1, l2, l3))
    ok = finite and l1 <= ref * (1 + 1e-12)
    detail = f"lambda1 {l1:.12g} against {ref:.12g}"
    return MultiplierFit(K_id, int(t.size), (l1, l2, l3), ref, "pass" if ok else "fail", detail)


@dataclass
class DecayCheck:
    K_id: str
    applicable: bool
    interval: tuple
    constant: float
    max_violation: float
    verdict: str

    def to_dict(self) -> dict:
        return {"id": self.K_id, "applicable": self.applicable, "interval": list(self.interval),
                "constant": _num(self.constant), "max_violation": _num(self.max_violation),
                "verdict": self.verdict}


def _trapz_cumulative(t, f):
    return np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(t))])


def multiplier_decay_check(sol: modes.ModeSolution, K_id: str, layout: ZoneLayout, t0: float | None = None,
                           epsilon: float = 0.5, eps: float = 0.1, rel_tol: float = 1e-6) -> DecayCheck:
    """E(t) <= E(t0) / (1 - epsilon) exp(-(epsilon / C) int_{t0}^t K) on the sub-zone interval.

    C = sup_s int_s^{t1} K E / E(s) is measured on the solution grid.
    """
    t = sol.t_grid
    xi = sol.xi
    inside = sub_zone_mask(layout, "xi2_over_b" if K_id == "zero" else K_id, t, np.full(t.shape, xi), eps)
    if t0 is not None:
        inside &= t >= t0
    if xi <= 0 or not np.any(inside):
        return DecayCheck(K_id, False, (math.nan, math.nan), math.nan, math.nan, "not-applicable")
    first = int(np.argmax(inside))
    stop = first
    while stop + 1 < t.size and inside[stop + 1]:
        stop += 1
    if stop - first < 2:
        return DecayCheck(K_id, False, (float(t[first]), float(t[stop])), math.nan, math.nan, "not-applicable")
    ts = t[first:stop + 1]
    E = sol.energy[first:stop + 1]
    b, b1 = layout.b.value(ts), layout.b.d1(ts)
    K, _ = _k_values(K_id, b, b1, xi)
    cumKE = _trapz_cumulative(ts, K * E)
    tail = cumKE[-1] - cumKE
    C = float(np.max(tail / E))
    cumK = _trapz_cumulative(ts, K)
    rate = 0.0 if C == 0.0 else epsilon / C
    rhs = E[0] / (1.0 - epsilon) * np.exp(-rate * cumK)
    viol = float(np.max(np.maximum(E - rhs * (1.0 + rel_tol), 0.0)))
    return DecayCheck(K_id, True, (float(ts[0]), float(ts[-1])), C, viol, "pass" if viol == 0.0 else "fail")


# ------------------------------------------------------- delta asymptotics

@dataclass
class DeltaAsymptotics:
    monotone_tail: bool
    constant: float
    window_prev: float
    window_last: float
    stable: bool


def delta_asymptotics(b: CoefficientProfile, g: CoefficientProfile, xi: float, t) -> DeltaAsymptotics:
    """t/delta non-decreasing on the tail half and int_0^t 1/delta <= c t/delta with c window-stable."""
    t = np.asarray(t, dtype=float)
    log_delta = modes.damping_integral(b, g, xi, 0.0, t)
    inv = cumulative_quad(lambda r: np.exp(-modes.damping_integral(b, g, xi, 0.0, r)), t)
    tail = t >= 0.5 * t[-1]
    log_q = np.log(t[tail]) - log_delta[tail]
    monotone = bool(np.all(np.diff(log_q) >= -1e-12))
    pos = t > 0
    ratio = np.log(inv[pos]) - (np.log(t[pos]) - log_delta[pos])
    C, cp, cl, verdict = window_verdict(t[pos], ratio)
    return DeltaAsymptotics(monotone, C, cp, cl, verdict == "pass")


__all__ = [
    "AuxSymbols", "BOUNDS", "BoundCheck", "DataNorm", "DecayCheck", "Envelope", "EnvelopeError", "EnvelopeSpec",
    "EnvelopeTerm", "GluedEnvelope", "INEQUALITIES", "InequalityResult", "MULTIPLIERS", "MultiplierFit",
    "SYMBOL_CHECKS", "SymbolIntegral", "THEOREMS", "ZoneError", "bound_check", "default_kappa",
    "delta_asymptotics", "f_kappa", "glue_mode_envelope", "micro_energy_log_entries", "mode_bound",
    "multiplier_check", "multiplier_decay_check", "multiplier_grid", "pointwise_inequality_suite",
    "sub_zone_mask", "symbol_integrability", "theorem_envelope", "window_verdict",
]
