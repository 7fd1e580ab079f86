"""Friction classification and the named coefficient condition sets.

Asymptotic properties are decided on a finite grid from the last three
dyadic windows [T/8, T/4], [T/4, T/2], [T/2, T]. A quantity whose window
maxima settle (increments shrinking at least geometrically) is treated as
bounded and its limit is extrapolated; one whose increments do not shrink is
treated as growing; anything else is undetermined rather than guessed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coeffcalc import CoefficientProfile, adaptive_quad, big_G

PASS, FAIL, UNDETERMINED = "pass", "fail", "undetermined"

TAIL_REL_TOL = 1e-6
SETTLING_RATIO = 0.75  # increments shrinking at least this fast count as settling
GROWTH_RATIO = 0.95  # increments at least this large relative to the previous count as growth
BOUNDARY_TOL = 1e-3
MIN_POINTS_PER_WINDOW = 8

CONDITION_SETS = {
    "A1A3": ("A1", "A2", "A3"),
    "A'1A'3": ("A'1", "A'2", "A'3"),
    "NEF": ("N-EF",),
    "B'1B'3": ("B'1", "B'2", "B'3"),
    "B1B3": ("B1", "B2", "B3"),
    "EF": ("EF",),
    "G1G4": ("G1", "G2", "G3", "G4"),
    "E1E5": ("E1", "E2", "E3", "E4", "E5"),
    "OD1OD2": ("OD1", "OD2"),
}
# which profiles each set reads
_NEEDS = {
    "A1A3": ("g",), "A'1A'3": ("b", "g"), "NEF": ("b", "g"), "B'1B'3": ("b",), "B1B3": ("b",),
    "EF": ("b",), "G1G4": ("b", "g"), "E1E5": ("b", "g"), "OD1OD2": ("b",),
}


class ConditionError(ValueError):
    pass


def default_horizon(*profiles: CoefficientProfile | None) -> float:
    """T = 50, or 6 when any profile is double exponential."""
    if any(p is not None and p.family == "doubleexp" for p in profiles):
        return 6.0
    return 50.0


@dataclass(frozen=True)
class SampleGrid:
    horizon: float = 50.0
    points: int = 4001

    def times(self) -> np.ndarray:
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        return np.linspace(0.0, self.horizon, self.points)


def as_grid(grid, horizon: float) -> np.ndarray:
    if grid is None:
        return SampleGrid(horizon).times()
    if isinstance(grid, SampleGrid):
        return grid.times()
    if isinstance(grid, int):
        return SampleGrid(horizon, grid).times()
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ValueError("grid must be a strictly increasing array of times >= 0")
    return t


def window_maxima(t: np.ndarray, values: np.ndarray, count: int = 5):
    """Max of ``values`` on each of the last ``count`` dyadic windows, oldest first.

    Falls back to three windows when the older ones are too sparsely sampled;
    returns None when even those hold fewer than MIN_POINTS_PER_WINDOW samples.
    """
    T = t[-1]
    out = []
    for k in range(count - 1, -1, -1):
        lo, hi = T / 2 ** (k + 1), T / 2**k
        sel = (t >= lo) & (t <= hi)
        if np.count_nonzero(sel) < MIN_POINTS_PER_WINDOW:
            if k >= 3:
                out = []
                continue
            return None
        out.append(float(np.max(values[sel])))
    return out


@dataclass
class TailTrend:
    kind: str  # "bounded", "growing" or "undetermined"
    limit: float  # extrapolated limit when bounded, last window max otherwise
    maxima: list

    @property
    def bounded(self) -> bool:
        return self.kind == "bounded"


def _aitken(seq):
    s = np.asarray(seq, dtype=float)
    d1 = s[1:-1] - s[:-2]
    d2 = s[2:] - s[1:-1]
    den = d2 - d1
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den != 0, s[2:] - d2**2 / den, s[2:])


def tail_trend(maxima) -> TailTrend:
    """Classify successive window maxima as settling, growing or unclear.

    The verdict uses the last three windows; a settling limit is extrapolated
    by Aitken's delta-squared, iterated once when five windows are available.
    """
    if maxima is None:
        return TailTrend(UNDETERMINED, np.nan, [])
    maxima = list(maxima)
    m1, m2, m3 = maxima[-3:]
    if not all(np.isfinite(maxima)):
        return TailTrend("growing" if m3 == np.inf else UNDETERMINED, m3, maxima)
    d1, d2 = m2 - m1, m3 - m2
    scale = max(abs(m1), abs(m2), abs(m3), np.finfo(float).tiny)
    if d2 <= 1e-12 * scale:
        return TailTrend("bounded", m3, maxima)
    if d1 > 0:
        rho = d2 / d1
        if rho <= SETTLING_RATIO:
            limit = m3 + d2 * rho / (1.0 - rho)
            if len(maxima) >= 5 and np.all(np.diff(maxima) > 0):
                second = float(_aitken(_aitken(maxima[-5:]))[-1])
                if np.isfinite(second) and m3 <= second <= limit:
                    limit = second
            return TailTrend("bounded", limit, maxima)
        if rho >= GROWTH_RATIO:
            return TailTrend("growing", m3, maxima)
    return TailTrend(UNDETERMINED, m3, maxima)


@dataclass
class IntegralTest:
    converges: bool | None  # None when undecided
    total: float
    tail: float
    remainder_estimate: float
    rule: str


def integral_test(primitive, horizon: float) -> IntegralTest:
    """Decide whether the integral of a non-negative function converges.

    ``primitive(t)`` is the integral from 0 to t. Convergence is certified
    when the last dyadic window contributes less than TAIL_REL_TOL of the
    total, or when the window contributions shrink at least geometrically
    (ratio <= SETTLING_RATIO), in which case the remainder beyond the horizon
    is extrapolated. Window contributions that do not shrink mean divergence.
    """
    T = horizon
    pts = np.array([T / 8, T / 4, T / 2, T])
    vals = np.asarray(primitive(pts), dtype=float)
    total = float(vals[-1])
    w = np.diff(vals)
    tail = float(w[-1])
    if not np.isfinite(total):
        return IntegralTest(False, total, tail, np.inf, "non-finite primitive")
    if total <= 0:
        return IntegralTest(True, total, tail, 0.0, "zero integral")
    if tail < TAIL_REL_TOL * total:
        return IntegralTest(True, total, tail, tail, "last window below tolerance")
    if w[0] > 0 and w[1] > 0:
        r1, r2 = w[1] / w[0], w[2] / w[1]
        if r2 <= SETTLING_RATIO and r1 <= SETTLING_RATIO:
            rem = tail * r2 / (1.0 - r2)
            return IntegralTest(True, total, tail, rem, f"geometric window ratio {r2:.3g}")
        if r2 >= GROWTH_RATIO:
            return IntegralTest(False, total, tail, np.inf, f"window ratio {r2:.3g} does not shrink")
    return IntegralTest(None, total, tail, np.nan, "window ratios inconclusive")


@dataclass
class Verdict:
    status: str
    constant: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"status": self.status, "constant": _num(self.constant), "detail": self.detail}


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else str(x)


@dataclass
class ConditionReport:
    set_id: str
    verdicts: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.status == PASS for v in self.verdicts.values())

    def passed_subset(self, ids) -> bool:
        return all(self.verdicts[i].status == PASS for i in ids)

    def to_dict(self) -> dict:
        return {
            "set": self.set_id,
            "passed": self.passed,
            "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
            "fitted": {k: _num(v) for k, v in self.fitted.items()},
        }


@dataclass
class DampingClass:
    kind: str
    evidence: list = field(default_factory=list)  # (condition id, status, witness)
    limsup_tb: float = np.nan
    diagnostics: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "limsup_tb": _num(self.limsup_tb),
            "evidence": [{"condition": c, "status": s, "witness": _num(w)} for c, s, w in self.evidence],
            "diagnostics": list(self.diagnostics),
        }


KINDS = ("Scattering", "NonEffective", "Effective", "OverDamping", "Unclassified")


def _bounded_constant(t, ratio, name: str) -> Verdict:
    """Smallest constant C with ratio <= C on the grid, plus a boundedness verdict."""
    if not np.all(np.isfinite(ratio)):
        return Verdict(FAIL, np.inf, f"{name} not finite on the grid")
    grid_max = float(np.max(ratio))
    trend = tail_trend(window_maxima(t, ratio))
    if trend.kind == "growing":
        return Verdict(FAIL, grid_max, f"{name} keeps growing on the tail")
    if trend.kind == UNDETERMINED:
        return Verdict(UNDETERMINED, grid_max, f"{name}: tail trend undetermined")
    return Verdict(PASS, max(grid_max, trend.limit), f"{name} bounded")


def _sign(values, strict_negative: bool = False, strict_positive: bool = False) -> bool:
    if strict_negative:
        return bool(np.all(values < 0))
    if strict_positive:
        return bool(np.all(values > 0))
    return True


def _integrable(primitive, horizon, label) -> Verdict:
    res = integral_test(primitive, horizon)
    if res.converges is None:
        return Verdict(UNDETERMINED, res.total, f"{label}: {res.rule}")
    status = PASS if res.converges else FAIL
    return Verdict(status, res.total + (res.remainder_estimate if res.converges else 0.0),
                   f"{label}: {res.rule}")


def _quad_primitive(func, horizon):
    """Primitive from 0 evaluated by adaptive quadrature on the dyadic points."""

    def prim(ts):
        ts = np.atleast_1d(ts)
        out = np.empty(ts.size)
        acc, prev = 0.0, 0.0
        for i, t in enumerate(ts):
            acc += adaptive_quad(func, prev, float(t), rtol=1e-10)
            prev = float(t)
            out[i] = acc
        return out

    return prim


def _positive(values, name) -> Verdict | None:
    if not np.all(values > 0):
        return Verdict(FAIL, float(np.min(values)), f"{name} not positive on the grid")
    return None


def check_conditions(set_id: str, b: CoefficientProfile | None, g: CoefficientProfile | None,
                     horizon: float | None = None, grid=None) -> ConditionReport:
    """Sample one named condition set on [0, horizon] and fit its free constants."""
    if set_id not in CONDITION_SETS:
        raise ConditionError(f"unknown condition set {set_id!r}; expected one of {sorted(CONDITION_SETS)}")
    for role in _NEEDS[set_id]:
        if (b if role == "b" else g) is None:
            raise ConditionError(f"condition set {set_id} needs the {role} profile")
    if horizon is None:
        horizon = default_horizon(b, g)
    t = as_grid(grid, horizon)
    horizon = float(t[-1])
    rep = ConditionReport(set_id)
    V = rep.verdicts

    if set_id == "A1A3":
        gv, g1, g2 = g.value(t), g.d1(t), g.d2(t)
        V["A1"] = _positive(gv, "g") or (Verdict(PASS, float(np.min(g1)), "g > 0 and g' > 0")
                                        if _sign(g1, strict_positive=True) else
                                        Verdict(FAIL, float(np.min(g1)), "g' not positive"))
        V["A2"] = _integrable(g.recip_primitive, horizon, "1/g")
        G = big_G(g, t)
        c1 = _bounded_constant(t, np.abs(g1) * G / gv**2, "|g'| G / g^2")
        c2 = _bounded_constant(t, np.abs(g2) * G**2 / gv**3, "|g''| G^2 / g^3")
        rep.fitted["C1"], rep.fitted["C2"] = c1.constant, c2.constant
        V["A3"] = _merge("A3", c1, c2)
    elif set_id == "A'1A'3":
        bv, b1 = b.value(t), b.d1(t)
        gv = g.value(t)
        a1_sign = _sign(b1, strict_negative=True)
        integ = _integrable(b.primitive, horizon, "b")
        if not a1_sign:
            V["A'1"] = Verdict(FAIL, float(np.max(b1)), "b' not negative")
        else:
            V["A'1"] = integ
        G = big_G(g, t)
        V["A'2"] = _bounded_constant(t, bv * G / gv, "b G / g")
        rep.fitted["C_tilde"] = V["A'2"].constant
        V["A'3"] = _bounded_constant(t, np.abs(b1) * (1 + t) / bv, "|b'| (1+t) / b")
        rep.fitted["c"] = V["A'3"].constant
    elif set_id == "NEF":
        bv, gv = b.value(t), g.value(t)
        V["N-EF"] = _bounded_constant(t, bv * big_G(g, t) / gv, "b G / g")
        rep.fitted["C_tilde"] = V["N-EF"].constant
    elif set_id == "B'1B'3":
        bv, b1 = b.value(t), b.d1(t)
        V["B'1"] = (Verdict(PASS, None, "b, b' finite") if np.all(np.isfinite(bv)) and np.all(np.isfinite(b1))
                    else Verdict(FAIL, None, "b or b' not finite"))
        V["B'2"] = (Verdict(PASS, float(np.max(b1)), "b' < 0") if _sign(b1, strict_negative=True)
                    else Verdict(FAIL, float(np.max(b1)), "b' not negative"))
        if V["B'2"].status == PASS:
            V["B'3"] = _bounded_constant(t, bv**2 / (-b1), "b^2 / (-b')")
        else:
            V["B'3"] = Verdict(FAIL, np.inf, "needs b' < 0")
        rep.fitted["C"] = V["B'3"].constant
    elif set_id == "B1B3":
        bv, b1, b2 = b.value(t), b.d1(t), b.d2(t)
        finite = np.all(np.isfinite(bv)) and np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))
        V["B1"] = Verdict(PASS if finite else FAIL, None, "b, b', b'' finite" if finite else "not C^2 on grid")
        V["B2"] = _b2(t, bv, b1)
        c1 = _bounded_constant(t, np.abs(b1) * (1 + t) / bv, "|b'| (1+t) / b")
        c2 = _bounded_constant(t, np.abs(b2) * (1 + t) ** 2 / bv, "|b''| (1+t)^2 / b")
        rep.fitted["C1"], rep.fitted["C2"] = c1.constant, c2.constant
        V["B3"] = _merge("B3", c1, c2)
    elif set_id == "EF":
        bv, b1 = b.value(t), b.d1(t)
        v = _bounded_constant(t, np.abs(b1) / bv**2, "|b'| / b^2")
        rep.fitted["a"] = v.constant
        if v.status == PASS and not v.constant < 1:
            v = Verdict(FAIL, v.constant, "fitted a is not below 1")
        V["EF"] = v
    elif set_id == "G1G4":
        gv, g1, g2 = g.value(t), g.d1(t), g.d2(t)
        V["G1"] = _positive(gv, "g") or (Verdict(PASS, float(np.max(g1)), "g > 0 and g' < 0")
                                        if _sign(g1, strict_negative=True) else
                                        Verdict(FAIL, float(np.max(g1)), "g' not negative"))
        V["G2"] = _integrable(g.primitive, horizon, "g")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = g2 * gv / g1**2  # (g''/g') / (g'/g)
        upper = _bounded_constant(t, ratio, "g'' g / g'^2")
        low = float(np.min(ratio)) if np.all(np.isfinite(ratio)) else np.nan
        rep.fitted["G3_lower"], rep.fitted["G3_upper"] = low, upper.constant
        if upper.status != PASS:
            V["G3"] = upper
        elif not low > 0:
            V["G3"] = Verdict(FAIL, low, "g'' g / g'^2 not bounded away from 0")
        else:
            V["G3"] = Verdict(PASS, upper.constant, f"ratio in [{low:.4g}, {upper.constant:.4g}]")
        if V["G1"].status == PASS:
            bv = b.value(t)
            v = _bounded_constant(t, bv * gv / (-g1), "b g / (-g')")
            rep.fitted["a"] = v.constant
            if v.status == PASS and not (0 < v.constant < 1):
                v = Verdict(FAIL, v.constant, "fitted a outside (0, 1)")
            V["G4"] = v
        else:
            V["G4"] = Verdict(FAIL, np.inf, "needs g' < 0")
    elif set_id == "E1E5":
        gv, g1 = g.value(t), g.d1(t)
        bv, b1 = b.value(t), b.d1(t)
        V["E1"] = _positive(gv, "g") or (Verdict(PASS, float(np.max(g1)), "g > 0 and g' < 0")
                                        if _sign(g1, strict_negative=True) else
                                        Verdict(FAIL, float(np.max(g1)), "g' not negative"))
        V["E2"] = _integrable(g.primitive, horizon, "g")
        bg = float(np.max(bv * gv))
        rep.fitted["max_bg"] = bg
        V["E3"] = Verdict(PASS if bg <= 0.5 * (1 + 1e-12) else FAIL, bg, "max b g against 1/2")
        e4 = float(np.max(b1 / bv + g1 / gv))
        rep.fitted["max_E4"] = e4
        V["E4"] = Verdict(PASS if e4 <= 1e-12 else FAIL, e4, "max of b'/b + g'/g")
        V["E5"] = _integrable(_quad_primitive(lambda s: _dsq_over(g, s), horizon), horizon, "g'^2/g")
    elif set_id == "OD1OD2":
        bv, b1 = b.value(t), b.d1(t)
        V["OD1"] = _integrable(b.recip_primitive, horizon, "1/b")
        with np.errstate(over="ignore"):
            ratio = np.abs(b1) / bv**2
        V["OD2"] = _vanishing(t, ratio, "|b'| / b^2")
    return rep


def _dsq_over(g: CoefficientProfile, s):
    """g'^2 / g written as g (g'/g)^2, zero where g underflows."""
    gv = g.value(s)
    logd = np.divide(g.d1(s), gv, out=np.zeros_like(gv), where=gv > 0)
    return gv * logd**2


def _merge(name, *parts: Verdict) -> Verdict:
    for status in (FAIL, UNDETERMINED):
        for p in parts:
            if p.status == status:
                return Verdict(status, p.constant, p.detail)
    return Verdict(PASS, max(p.constant for p in parts), "; ".join(p.detail for p in parts))


def _vanishing(t, ratio, name) -> Verdict:
    """ratio -> 0: window maxima shrink at least geometrically or are negligible."""
    if not np.all(np.isfinite(ratio)):
        return Verdict(FAIL, np.inf, f"{name} not finite")
    m = window_maxima(t, ratio)
    if m is None:
        return Verdict(UNDETERMINED, None, "grid too coarse on the tail")
    m1, m2, m3 = m[-3:]
    if m3 <= 1e-12 or (m2 <= 0.5 * m1 and m3 <= 0.5 * m2):
        return Verdict(PASS, m3, f"{name} -> 0 (last window max {m3:.3g})")
    if m3 >= m2 >= m1:
        return Verdict(FAIL, m3, f"{name} does not decay")
    return Verdict(UNDETERMINED, m3, f"{name} decay not certified")


def _b2(t, bv, b1) -> Verdict:
    """b' keeps one sign (isolated zeros allowed) and t b(t) -> infinity."""
    if not (np.all(b1 >= 0) or np.all(b1 <= 0)):
        return Verdict(FAIL, None, "b' changes sign")
    tb = t * bv
    half = t >= 0.5 * t[-1]
    if np.any(np.diff(tb[half]) < 0):
        return Verdict(FAIL, float(tb[-1]), "t b(t) not monotone on the tail")
    trend = tail_trend(window_maxima(t, tb))
    if trend.kind == "growing":
        return Verdict(PASS, float(tb[-1]), "t b(t) grows without settling")
    if trend.kind == "bounded":
        return Verdict(FAIL, trend.limit, "t b(t) settles to a finite limit")
    return Verdict(UNDETERMINED, float(tb[-1]), "t b(t) growth not certified")


def limsup_tb(t, bv) -> tuple[float, TailTrend]:
    """Estimate of limsup t b(t): tail-half max, extrapolated when it still settles upward."""
    tb = t * bv
    half = t >= 0.5 * t[-1]
    tail_max = float(np.max(tb[half]))
    trend = tail_trend(window_maxima(t, tb))
    if trend.kind == "bounded":
        return max(tail_max, trend.limit), trend
    return tail_max, trend


def classify_friction(b: CoefficientProfile, horizon: float | None = None, grid=None) -> DampingClass:
    """Assign one of Scattering / NonEffective / Effective / OverDamping / Unclassified."""
    if horizon is None:
        horizon = default_horizon(b)
    t = as_grid(grid, horizon)
    horizon = float(t[-1])
    bv = b.value(t)
    res = DampingClass("Unclassified")
    if not np.all(bv > 0):
        res.diagnostics.append("b is not positive on the grid; classification needs b > 0")
        return res
    if window_maxima(t, bv) is None:
        res.diagnostics.append("grid too coarse to decide tail behaviour")
        return res

    scat = integral_test(b.primitive, horizon)
    over = integral_test(b.recip_primitive, horizon)
    res.evidence.append(("L1(b)", _status(scat.converges), scat.total))
    res.evidence.append(("L1(1/b)", _status(over.converges), over.total))
    lim, trend = limsup_tb(t, bv)
    res.limsup_tb = lim
    res.evidence.append(("limsup t b", trend.kind, lim))

    if scat.converges and over.converges:
        res.diagnostics.append("both b and 1/b look integrable; grid cannot separate them")
        return res
    if scat.converges:
        res.kind = "Scattering"
        return res
    if over.converges:
        res.kind = "OverDamping"
        return res

    nef = check_conditions("B'1B'3", b, None, horizon, t)
    for cid, v in nef.verdicts.items():
        res.evidence.append((cid, v.status, v.constant))
    if trend.kind == "bounded":
        if abs(lim - 1.0) <= BOUNDARY_TOL:
            res.diagnostics.append(f"boundary: limsup t b = {lim:.6g} within {BOUNDARY_TOL} of 1")
            return res
        if lim < 1.0 and nef.passed:
            res.kind = "NonEffective"
            return res
    ef = check_conditions("B1B3", b, None, horizon, t)
    for cid, v in ef.verdicts.items():
        res.evidence.append((cid, v.status, v.constant))
    if trend.kind == "growing" and ef.passed:
        res.kind = "Effective"
        return res
    if scat.converges is None or over.converges is None or trend.kind == UNDETERMINED:
        res.diagnostics.append("tail behaviour undetermined on this grid")
    else:
        res.diagnostics.append("no class hypothesis set holds on this grid")
    return res


def _status(flag):
    return UNDETERMINED if flag is None else (PASS if flag else FAIL)
