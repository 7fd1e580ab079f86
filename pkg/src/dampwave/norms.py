"""Sobolev norms of radial fields from their Fourier modes, and ratio statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PROFILE_KINDS = ("log_gaussian", "indicator")
NORM_KINDS = ("hom", "inhom", "bessel", "cap")


class NormError(ValueError):
    pass


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def log_grid(r_min: float, r_max: float, nodes: int) -> np.ndarray:
    if not (0 < r_min < r_max) or nodes < 3:
        raise NormError("need 0 < r_min < r_max and at least 3 nodes")
    return np.exp(np.linspace(math.log(r_min), math.log(r_max), nodes))


def refine_grid(r: np.ndarray) -> np.ndarray:
    """Insert geometric midpoints; the old nodes sit at even positions."""
    mid = np.sqrt(r[:-1] * r[1:])
    out = np.empty(2 * r.size - 1)
    out[0::2] = r
    out[1::2] = mid
    return out


def simpson_weights(count: int, h: float) -> np.ndarray:
    """Composite Simpson weights on ``count`` equispaced nodes.

    With an odd number of intervals the last three use the 3/8 rule.
    """
    if count < 3:
        raise NormError("Simpson needs at least 3 nodes")
    w = np.zeros(count)
    intervals = count - 1
    simpson_end = intervals if intervals % 2 == 0 else intervals - 3
    if simpson_end > 0:
        pattern = np.full(simpson_end + 1, 2.0)
        pattern[1::2] = 4.0
        pattern[0] = pattern[-1] = 1.0
        w[:simpson_end + 1] = pattern * h / 3.0
    if simpson_end < intervals:
        k = simpson_end
        w[k:k + 4] += 3.0 * h / 8.0 * np.array([1.0, 3.0, 3.0, 1.0])
    return w


def log_quadrature(r: np.ndarray, f: np.ndarray) -> float:
    """Integral of f(r) dr over a log-spaced grid, as Simpson in ln r."""
    r = np.asarray(r, dtype=float)
    lr = np.log(r)
    h = np.diff(lr)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise NormError("r-grid must be log-spaced")
    return float(np.dot(simpson_weights(r.size, float(h[0])), np.asarray(f) * r))


@dataclass(frozen=True)
class DataProfile:
    """Radial data u0_hat = u0 * phi(r), u1_hat = u1 * phi(r), supported in [r_min, r_max]."""
    kind: str = "log_gaussian"
    r_min: float = 0.1
    r_max: float = 10.0
    nodes: int = 160
    n: int = 3
    r0: float = 1.0
    sigma: float = 0.5
    u0: float = 1.0
    u1: float = 1.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise NormError(f"unknown data profile kind {self.kind!r}")
        if not (0 < self.r_min < self.r_max):
            raise NormError("data band needs 0 < r_min < r_max")
        if self.nodes < 3 or self.n < 1 or self.sigma <= 0:
            raise NormError("need nodes >= 3, n >= 1 and sigma > 0")

    def grid(self, nodes: int | None = None) -> np.ndarray:
        return log_grid(self.r_min, self.r_max, nodes or self.nodes)

    def shape(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        inside = (r >= self.r_min * (1 - 1e-12)) & (r <= self.r_max * (1 + 1e-12))
        if self.kind == "indicator":
            val = np.ones_like(r)
        else:
            with np.errstate(divide="ignore"):
                val = np.exp(-np.log(r / self.r0) ** 2 / (2.0 * self.sigma**2))
        return np.where(inside, val, 0.0)

    def u0_hat(self, r) -> np.ndarray:
        return self.u0 * self.shape(r)

    def u1_hat(self, r) -> np.ndarray:
        return self.u1 * self.shape(r)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("kind", "r_min", "r_max", "nodes", "n", "r0", "sigma", "u0", "u1")}


@dataclass(frozen=True)
class NormRequest:
    beta: float
    n: int = 3
    which: str = "u"
    t: float | None = None

    def __post_init__(self):
        if self.which not in ("u", "ut"):
            raise NormError("which must be 'u' or 'ut'")


def _weighted_norm(r, values, weight, n) -> float:
    # scale out the amplitude so tiny data does not underflow when squared
    values = np.abs(values)
    peak = float(np.max(values)) if values.size else 0.0
    if peak == 0.0 or not math.isfinite(peak):
        return peak
    integrand = weight * (values / peak) ** 2 * r ** (n - 1)
    return peak * math.sqrt(max(sphere_area(n) * log_quadrature(r, integrand), 0.0))


def sobolev_norm(r, field_values, req: NormRequest) -> float:
    """|| |D|^beta f || for a radial field given by its Fourier modes on ``r``.

    ``field_values`` is either an array over r or a list of ModeSolution
    sampled at ``req.t``.
    """
    r = np.asarray(r, dtype=float)
    values = field_values
    if not isinstance(field_values, np.ndarray) and len(field_values) and hasattr(field_values[0], "u_hat"):
        values = mode_values(field_values, req.which, req.t, r)
    values = np.asarray(values, dtype=float)
    if values.shape != r.shape:
        raise NormError(f"field has shape {values.shape}, grid has {r.shape}")
    return _weighted_norm(r, values, r ** (2.0 * req.beta), req.n)


def mode_values(sols, which: str, t, r=None) -> np.ndarray:
    """Sample u_hat or ut_hat of each mode at time t (an output grid point)."""
    if r is not None:
        xis = np.array([s.xi for s in sols])
        if xis.shape != np.shape(r) or not np.allclose(xis, r, rtol=1e-12, atol=0.0):
            raise NormError("mode frequencies do not match the r-grid")
    out = np.empty(len(sols))
    for k, s in enumerate(sols):
        idx = np.searchsorted(s.t_grid, t)
        if idx >= s.t_grid.size or not np.isclose(s.t_grid[idx], t, rtol=1e-12, atol=1e-14):
            raise NormError(f"t={t} is not on the mode output grid")
        out[k] = (s.u_hat if which == "u" else s.ut_hat)[idx]
    return out


def norm_weight(r, s: float, kind: str = "hom") -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if kind == "hom":
        return r ** (2.0 * s)
    if kind == "inhom":
        return (1.0 + r * r) ** s
    if kind == "bessel":
        return r ** (2.0 * s) * (1.0 + r * r) ** -2.0
    raise NormError(f"unknown norm kind {kind!r}")


def data_norm(data: DataProfile, which: str, s: float, homogeneous: bool = True,
              n: int | None = None, kind: str | None = None, r=None) -> float:
    """Norm of u0 or u1 in H^s: homogeneous |r|^s, inhomogeneous <r>^s,
    ``bessel`` |r|^s <r>^-2, or ``cap`` max of the homogeneous orders s and s+1."""
    if which not in ("u0", "u1"):
        raise NormError("which must be 'u0' or 'u1'")
    kind = kind or ("hom" if homogeneous else "inhom")
    if kind not in NORM_KINDS:
        raise NormError(f"unknown norm kind {kind!r}")
    n = n or data.n
    r = data.grid() if r is None else np.asarray(r, dtype=float)
    values = data.u0_hat(r) if which == "u0" else data.u1_hat(r)
    if kind == "cap":
        return max(_weighted_norm(r, values, norm_weight(r, s), n),
                   _weighted_norm(r, values, norm_weight(r, s + 1.0), n))
    return _weighted_norm(r, values, norm_weight(r, s, kind), n)


def data_norm_refined(data: DataProfile, which: str, s: float, kind: str | None = None, r=None,
                      tol: float = 1e-6, max_nodes: int = 40961) -> float:
    """data_norm on r (or the data grid), doubled until the value moves by at most tol relative."""
    r = data.grid() if r is None else np.asarray(r, dtype=float)
    val = data_norm(data, which, s, kind=kind, r=r)
    while 2 * r.size - 1 <= max_nodes:
        r = refine_grid(r)
        new = data_norm(data, which, s, kind=kind, r=r)
        done = abs(new - val) <= tol * abs(new)
        val = new
        if done:
            break
    return val


def field_norm_series(r, U: np.ndarray, beta: float, n: int) -> np.ndarray:
    """Norms of every row of U (times x r) with weight r^(2 beta)."""
    r = np.asarray(r, dtype=float)
    w = simpson_weights(r.size, float(np.log(r[1] / r[0]))) * r
    A = np.abs(U)
    peak = np.max(A, axis=-1, keepdims=True)
    scale = np.where(peak > 0, peak, 1.0)
    integrand = ((A / scale) ** 2) * (r ** (2.0 * beta + n - 1))
    return scale[..., 0] * np.sqrt(np.maximum(sphere_area(n) * (integrand @ w), 0.0))


@dataclass
class RatioStats:
    ratio: np.ndarray
    sup: float
    slope: float
    excluded: int
    sup_time: float = float("nan")
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"sup": self.sup, "slope": self.slope, "excluded": self.excluded, "sup_time": self.sup_time}


def tail_slope(t, values) -> float:
    """Least-squares slope of log values against log t over the tail half."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v) & (v > 0) & (t > 0)
    t, v = t[ok], v[ok]
    if t.size < 2:
        return float("nan")
    tail = t >= 0.5 * t[-1]
    if np.count_nonzero(tail) < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[tail]), np.log(v[tail]), 1)[0])


def ratio_series(t, norms, envelope) -> RatioStats:
    """Per-time ratio norm/envelope, its sup and the tail log-log slope.

    Envelope values that are zero, negative or not finite are excluded.
    """
    t = np.asarray(t, dtype=float)
    norms = np.asarray(norms, dtype=float)
    envelope = np.asarray(envelope, dtype=float)
    if not (t.shape == norms.shape == envelope.shape):
        raise NormError("time, norm and envelope series must be aligned")
    ok = np.isfinite(envelope) & (envelope > 0) & np.isfinite(norms)
    ratio = np.full_like(norms, np.nan)
    ratio[ok] = norms[ok] / envelope[ok]
    excluded = int(np.count_nonzero(~ok))
    if not np.any(ok):
        return RatioStats(ratio, float("nan"), float("nan"), excluded)
    k = int(np.nanargmax(ratio))
    return RatioStats(ratio, float(ratio[k]), tail_slope(t[ok], ratio[ok]), excluded, float(t[k]))
