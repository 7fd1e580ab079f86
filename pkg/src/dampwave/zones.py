"""Zone decompositions of the extended phase space (t, xi).

Each layout family exposes named curves. A curve is a residual r(t, xi)
whose sign change in t marks a separating time. Zone membership is always
decided by evaluating the set definitions literally, so the chain for a
fixed xi is obtained by cutting [0, T_max] at every separating time and
labelling each piece by its midpoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coeffcalc import CoefficientProfile, big_G

ZONE_TAGS = ("Zpd", "Zell", "Zred", "Zred1", "Zred2", "Zhyp", "Zdiss", "Gap")
REGION_TAGS = ("PiHyp", "PiEll", "Boundary")
FAMILIES = ("TwoZone", "FourZoneNonEffective", "EffectiveDecaying", "FiveZoneOverdamping", "UniformlyElliptic")

TIME_TOL = 1e-10
REGION_REL_TOL = 1e-12
DEFAULTS = {"N": 10.0, "N1": 10.0, "N2": 10.0, "eps": 0.1, "eps1": 1.1, "eps2": 0.9, "eps3": 0.2}
_CONSTANTS = {
    "TwoZone": ("N",),
    "FourZoneNonEffective": ("N1", "N2", "eps"),
    "EffectiveDecaying": ("N", "eps"),
    "FiveZoneOverdamping": ("N", "eps1", "eps2", "eps3"),
    "UniformlyElliptic": (),
}
_CURVES = {
    "TwoZone": ("t_xi",),
    "FourZoneNonEffective": ("t_xi1", "t_xi2", "t_xi3"),
    "EffectiveDecaying": ("t_ell", "t_red", "t_hyp", "f1", "f2", "t0", "real_N", "real_eps", "real_pi"),
    "FiveZoneOverdamping": ("t_xi1", "t_xi2", "t_xi3", "t_xi4", "f1", "f2", "real_pi"),
    "UniformlyElliptic": (),
}
# residuals that do not depend on xi
_XI_FREE = {"t0", "real_N", "real_eps", "real_pi"}


class ZoneError(ValueError):
    """Layout/profile mismatch; ``bracket`` carries the offending time bracket if any."""

    def __init__(self, message: str, bracket=None):
        super().__init__(message)
        self.bracket = bracket


def _sqrt_or_nan(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(x >= 0, np.sqrt(np.maximum(x, 0.0)), np.nan)


@dataclass(frozen=True)
class ZoneLayout:
    family: str
    b: CoefficientProfile
    g: CoefficientProfile
    constants: dict = field(default_factory=dict)
    t_max: float = 50.0
    t0: float | None = None  # zone start time of the hyperbolic zone (EffectiveDecaying)

    def c(self, name: str) -> float:
        return self.constants[name]

    @property
    def curves(self) -> tuple:
        return _CURVES[self.family]

    # separating functions shared by the layouts with Pi regions
    def f_plus(self, t, scale=None):
        """(scale/2g)(1 + sqrt(1 - 4bg/scale^2)); scale=None gives f1 = (1/g)(1 + sqrt(1 - bg))."""
        b, g = self.b.value(t), self.g.value(t)
        with np.errstate(divide="ignore"):  # g = 0 puts f_plus at infinity
            if scale is None:
                return (1.0 + _sqrt_or_nan(1.0 - b * g)) / g
            return 0.5 * scale / g * (1.0 + _sqrt_or_nan(1.0 - 4.0 * b * g / scale**2))

    def f_minus(self, t, scale=None):
        # rationalised to avoid cancellation when b g is tiny
        b, g = self.b.value(t), self.g.value(t)
        if scale is None:
            return b / (1.0 + _sqrt_or_nan(1.0 - b * g))
        return 2.0 * b / (scale * (1.0 + _sqrt_or_nan(1.0 - 4.0 * b * g / scale**2)))

    def residual(self, curve: str, t, xi: float):
        """Signed residual whose zero in t is the separating time of ``curve``."""
        if curve not in self.curves:
            raise ZoneError(f"curve {curve!r} is not defined for layout {self.family}")
        t = np.asarray(t, dtype=float)
        fam = self.family
        if fam == "TwoZone":
            return big_G(self.g, t) * xi * xi - self.c("N")
        if fam == "FourZoneNonEffective":
            if curve == "t_xi1":
                return xi - self.c("N1") * self.b.value(t)
            level = self.c("eps") if curve == "t_xi2" else self.c("N2")
            return self.g.value(t) * xi - level
        bg = self.b.value(t) * self.g.value(t)
        if curve == "f1":
            return self.f_plus(t) - xi
        if curve == "f2":
            return self.f_minus(t) - xi
        if curve == "real_pi":
            return 1.0 - bg
        if fam == "EffectiveDecaying":
            N, eps = self.c("N"), self.c("eps")
            if curve == "t_ell":
                return self.f_plus(t, N) - xi
            if curve == "t_red":
                return self.f_plus(t, eps) - xi
            if curve == "t_hyp":
                return self.f_minus(t, eps) - xi
            if curve == "t0":
                return eps**2 / 8.0 - bg
            if curve == "real_N":
                return N**2 / 4.0 - bg
            return eps**2 / 4.0 - bg  # real_eps
        level = {"t_xi1": "eps3", "t_xi2": "eps2", "t_xi3": "eps1", "t_xi4": "N"}[curve]
        return self.g.value(t) * xi - self.c(level)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "constants": dict(self.constants),
            "t_max": self.t_max,
            "t0": self.t0,
            "b": self.b.to_spec(),
            "g": self.g.to_spec(),
        }


def make_layout(family: str, b: CoefficientProfile, g: CoefficientProfile, t_max: float | None = None,
                g_slope_eps: float = 0.1, **constants) -> ZoneLayout:
    """Build and validate a layout; unspecified constants take the defaults."""
    if family not in FAMILIES:
        raise ZoneError(f"unknown zone family {family!r}; expected one of {FAMILIES}")
    unknown = set(constants) - set(_CONSTANTS[family]) - {"t0"}
    if unknown:
        raise ZoneError(f"constants {sorted(unknown)} do not apply to {family}")
    if t_max is None:
        t_max = 6.0 if "doubleexp" in (b.family, g.family) else 50.0
    t0 = constants.pop("t0", None)
    consts = {k: float(constants.get(k, DEFAULTS[k])) for k in _CONSTANTS[family]}
    _validate(family, consts, b, g, t_max, g_slope_eps)
    layout = ZoneLayout(family, b, g, consts, float(t_max), None)
    if family == "EffectiveDecaying":
        if t0 is None:
            t0 = auto_t0(b, g, consts["eps"], t_max)
        layout = ZoneLayout(family, b, g, consts, float(t_max), float(t0))
    return layout


def auto_t0(b: CoefficientProfile, g: CoefficientProfile, eps: float, t_max: float, points: int = 4001) -> float:
    """First grid time with b(t) g(t) <= eps^2 / 8 (inf when never reached)."""
    t = np.linspace(0.0, t_max, points)
    ok = b.value(t) * g.value(t) <= eps**2 / 8.0
    return float(t[np.argmax(ok)]) if np.any(ok) else math.inf


def _validate(family, c, b, g, t_max, g_slope_eps):
    if t_max <= 0:
        raise ZoneError("t_max must be positive")
    if family == "TwoZone" and not c["N"] > 0:
        raise ZoneError("TwoZone needs N > 0")
    if family == "FourZoneNonEffective":
        if not (c["N1"] > 0 and c["N2"] > 0 and 0 < c["eps"] < c["N2"]):
            raise ZoneError("FourZoneNonEffective needs N1, N2 > 0 and 0 < eps < N2")
    if family == "EffectiveDecaying" and not (0 < c["eps"] < c["N"]):
        raise ZoneError("EffectiveDecaying needs 0 < eps < N")
    if family == "FiveZoneOverdamping":
        lo, hi = 1.0 - 1.0 / math.sqrt(2.0), 1.0 + 1.0 / math.sqrt(2.0)
        e1, e2, e3, N = c["eps1"], c["eps2"], c["eps3"], c["N"]
        if not (0 < e3 < lo < e2 < e1 < hi < N):
            raise ZoneError(
                f"FiveZoneOverdamping needs 0 < eps3 < {lo:.6f} < eps2 < eps1 < {hi:.6f} < N, "
                f"got eps3={e3}, eps2={e2}, eps1={e1}, N={N}")
    if family in ("EffectiveDecaying", "FiveZoneOverdamping"):
        t = np.linspace(0.0, t_max, 4001)
        slope = float(np.max(-g.d1(t)))
        if slope > 2.0 - g_slope_eps:
            raise ZoneError(f"{family} requires -g'(t) <= 2 - eps = {2 - g_slope_eps:g}; max -g' = {slope:g}")


def separating_time(layout: ZoneLayout, curve: str, xi: float, samples: int = 257):
    """Crossing time of ``curve`` for this xi in [0, t_max], or None.

    The crossing is bracketed by geometric expansion from t = 0 and refined by
    bisection to TIME_TOL. The residual must be monotone on the bracket.
    """
    T = layout.t_max

    def r(t):
        return float(layout.residual(curve, t, xi))

    # residuals of the square-root curves are undefined before the radicand
    # turns positive; start the search where the curve exists
    start = 0.0
    r0 = r(0.0)
    if math.isnan(r0):
        probe = np.linspace(0.0, T, samples)
        vals = np.asarray(layout.residual(curve, probe, xi), dtype=float)
        ok = ~np.isnan(vals)
        if not np.any(ok):
            return None
        first = int(np.argmax(ok))
        lo, hi = probe[max(first - 1, 0)], probe[first]
        while hi - lo > TIME_TOL:
            mid = 0.5 * (lo + hi)
            if math.isnan(r(mid)):
                lo = mid
            else:
                hi = mid
        start = hi
        r0 = r(start)
    if r0 == 0.0:
        return float(start)

    step = max((T - start) / 2.0**20, TIME_TOL)
    lo, hi = start, min(start + step, T)
    found = False
    while True:
        rh = r(hi)
        if math.isnan(rh):
            raise ZoneError(f"curve {curve} undefined inside [{lo:g}, {hi:g}]", (lo, hi))
        if rh == 0.0 or (rh > 0) != (r0 > 0):
            found = True
            break
        if hi >= T:
            break
        lo, hi = hi, min(start + 2.0 * (hi - start), T)

    probe_hi = hi if found else T
    probe = np.linspace(start, probe_hi, samples if found else 16 * samples)
    vals = np.asarray(layout.residual(curve, probe, xi), dtype=float)
    if not found and np.all(np.sign(vals) == np.sign(r0)) and np.min(np.abs(vals)) > 1e-6 * np.max(np.abs(vals)):
        # one-signed and clear of zero: no crossing even if the residual is not monotone
        return None
    d = np.diff(vals)
    scale = np.max(np.abs(vals)) * 1e-12
    if np.any(d > scale) and np.any(d < -scale):
        raise ZoneError(f"residual of {curve} is not monotone on [{start:g}, {probe_hi:g}] (xi={xi:g})",
                        (start, probe_hi))
    if not found:
        return None
    if rh == 0.0:
        return float(hi)
    while hi - lo > TIME_TOL:
        mid = 0.5 * (lo + hi)
        rm = r(mid)
        if rm == 0.0:
            return float(mid)
        if (rm > 0) == (r0 > 0):
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


def region_of(b: CoefficientProfile, g: CoefficientProfile, t: float, xi: float) -> str:
    """PiHyp iff |xi| > (b + g xi^2)/2 beyond relative tolerance."""
    half = 0.5 * (float(b.value(t)) + float(g.value(t)) * xi * xi)
    diff = xi - half
    if abs(diff) <= REGION_REL_TOL * max(abs(xi), abs(half)):
        return "Boundary"
    return "PiHyp" if diff > 0 else "PiEll"


def _pi_masks(layout: ZoneLayout, t, xi):
    """Boolean masks (hyp, ell_low, ell_high, boundary) from the separating functions f1, f2."""
    f1, f2 = layout.f_plus(t), layout.f_minus(t)
    undefined = np.isnan(f1)
    high_undef = undefined & (xi * layout.g.value(t) > 1.0)
    with np.errstate(invalid="ignore"):
        hyp = ~undefined & (f2 < xi) & (xi < f1)
        low = (~undefined & (xi < f2)) | (undefined & ~high_undef)
        high = (~undefined & (xi > f1)) | high_undef
    bnd = ~(hyp | low | high)
    return hyp, low, high, bnd


# precedence used when a point satisfies more than one closed set definition
_PRECEDENCE = ("Zpd", "Zdiss", "Zhyp", "Zred2", "Zred", "Zred1", "Zell")


def zone_masks(layout: ZoneLayout, t, xi) -> dict:
    """Literal membership masks for every zone of the layout, broadcast over (t, xi)."""
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast(t, xi).shape
    t, xi = np.broadcast_to(t, shape), np.broadcast_to(xi, shape)
    fam = layout.family
    if fam == "UniformlyElliptic":
        return {"Zell": np.ones(shape, dtype=bool)}
    if fam == "TwoZone":
        val = big_G(layout.g, t) * xi * xi
        return {"Zpd": val <= layout.c("N"), "Zell": val > layout.c("N")}
    if fam == "FourZoneNonEffective":
        b, g = layout.b.value(t), layout.g.value(t)
        N1, N2, eps = layout.c("N1"), layout.c("N2"), layout.c("eps")
        above, below = xi >= N1 * b, xi <= N1 * b
        gx = g * xi
        return {
            "Zdiss": below & (gx <= eps),
            "Zhyp": above & (gx <= eps),
            "Zred": above & (gx >= eps) & (gx <= N2),
            "Zell": above & (gx >= N2),
        }
    hyp, low, high, bnd = _pi_masks(layout, t, xi)
    with np.errstate(invalid="ignore"):
        if fam == "EffectiveDecaying":
            N, eps = layout.c("N"), layout.c("eps")
            fn, fe_p, fe_m = layout.f_plus(t, N), layout.f_plus(t, eps), layout.f_minus(t, eps)
            t0 = layout.t0 if layout.t0 is not None else 0.0
            return {
                "Zdiss": (xi <= fe_m) & (low | bnd),
                "Zhyp": (fe_m <= xi) & (xi <= fe_p) & (hyp | bnd) & (t >= t0),
                "Zred": (fe_p <= xi) & (xi <= fn),
                "Zell": (xi >= fn) & (high | bnd),
            }
        gx = layout.g.value(t) * xi
        N, e1, e2, e3 = layout.c("N"), layout.c("eps1"), layout.c("eps2"), layout.c("eps3")
        return {
            "Zdiss": (gx <= e3) & (low | bnd),
            "Zhyp": (e2 <= gx) & (gx <= e1) & (hyp | bnd),
            "Zred2": (e3 <= gx) & (gx <= e2),
            "Zred1": (e1 <= gx) & (gx <= N),
            "Zell": (gx >= N) & (high | bnd),
        }


def zone_tags(layout: ZoneLayout, t, xi) -> np.ndarray:
    """Zone tag array over broadcast (t, xi); Gap where no definition holds."""
    masks = zone_masks(layout, t, xi)
    shape = next(iter(masks.values())).shape
    out = np.full(shape, "Gap", dtype=object)
    for tag in reversed(_PRECEDENCE):
        if tag in masks:
            out[masks[tag]] = tag
    return out


def zone_of(layout: ZoneLayout, t: float, xi: float) -> str:
    """Zone tag of (t, xi) from the literal set definitions; Gap when none holds."""
    return str(zone_tags(layout, float(t), float(xi))[()])


def zone_grid(layout: ZoneLayout, zone: str, xi_range=(1e-3, 1e3), points: int = 10_000,
              t_points: int = 200, xi_points: int = 400, t_range=None):
    """Up to ``points`` (t, xi) pairs lying in ``zone``, drawn from a log-xi x linear-t lattice."""
    lo, hi = t_range if t_range is not None else (0.0, layout.t_max)
    tt = np.linspace(lo, hi, t_points)
    xx = np.geomspace(xi_range[0], xi_range[1], xi_points)
    T, X = np.meshgrid(tt, xx, indexing="ij")
    mask = zone_tags(layout, T, X) == zone
    ts, xs = T[mask], X[mask]
    if ts.size > points:
        idx = np.linspace(0, ts.size - 1, points).astype(int)
        ts, xs = ts[idx], xs[idx]
    return ts, xs


@dataclass(frozen=True)
class ZoneInterval:
    zone: str
    start: float
    end: float

    @property
    def is_gap(self) -> bool:
        return self.zone == "Gap"

    def to_dict(self) -> dict:
        return {"zone": self.zone, "start": self.start, "end": self.end}


def breakpoints(layout: ZoneLayout, xi: float) -> list[float]:
    """All separating times for xi inside (0, t_max), sorted."""
    pts = set()
    for curve in layout.curves:
        tc = separating_time(layout, curve, xi)
        if tc is not None and 0.0 < tc < layout.t_max:
            pts.add(tc)
    if layout.family == "EffectiveDecaying" and layout.t0 is not None and 0 < layout.t0 < layout.t_max:
        pts.add(layout.t0)
    return sorted(pts)


def zone_chain(layout: ZoneLayout, xi: float) -> list[ZoneInterval]:
    """Ordered zone intervals covering [0, t_max] for fixed xi."""
    if not xi > 0:
        raise ZoneError("zone_chain needs xi > 0")
    cuts = [0.0] + breakpoints(layout, xi) + [layout.t_max]
    chain: list[ZoneInterval] = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= TIME_TOL:
            continue
        tag = zone_of(layout, 0.5 * (lo + hi), xi)
        if chain and chain[-1].zone == tag:
            chain[-1] = ZoneInterval(tag, chain[-1].start, hi)
        else:
            chain.append(ZoneInterval(tag, lo, hi))
    # absorb the sliver dropped above so the chain covers [0, t_max] exactly
    if chain:
        chain[0] = ZoneInterval(chain[0].zone, 0.0, chain[0].end)
        chain[-1] = ZoneInterval(chain[-1].zone, chain[-1].start, layout.t_max)
        for i in range(1, len(chain)):
            if chain[i].start != chain[i - 1].end:
                chain[i] = ZoneInterval(chain[i].zone, chain[i - 1].end, chain[i].end)
    return chain


def zone_time(chain: list[ZoneInterval], zone: str):
    """(start, end) of the first interval with this tag, or None."""
    for iv in chain:
        if iv.zone == zone:
            return iv.start, iv.end
    return None
