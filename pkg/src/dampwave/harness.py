"""Scenario loading, orchestration of all checks, and report emission."""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, classify, envelopes, modes, norms, zones
from .coeffcalc import ProfileError, profile_from_spec

CHUNK = 64


class ScenarioError(ValueError):
    pass


# ----------------------------------------------------------- schema

THEOREM_DEFAULTS = {
    "T2.1": ("Scattering", {"A1A3": None, "A'1A'3": None}, "TwoZone"),
    "T2.2": ("Scattering", {"A'1A'3": ["A'1"], "G1G4": None}, "FourZoneNonEffective"),
    "T3.1": ("NonEffective", {"A1A3": None, "B'1B'3": None, "NEF": None}, "TwoZone"),
    "T3.2": ("NonEffective", {"B'1B'3": None, "G1G4": None}, "FourZoneNonEffective"),
    "T4.1": ("Effective", {"A1A3": None, "B1B3": None, "EF": None}, "TwoZone"),
    "T4.2": ("Effective", {"B1B3": None, "E1E5": None, "EF": None}, "EffectiveDecaying"),
    "T5.1": ("OverDamping", {"A1A3": None, "B1B3": ["B1", "B2"], "OD1OD2": None}, "TwoZone"),
    "T5.2": ("OverDamping", {"E1E5": ["E1", "E2", "E3", "E4"]}, "EffectiveDecaying"),
    "T5.3": ("OverDamping", {"OD1OD2": None}, "FiveZoneOverdamping"),
    "T5.4": ("OverDamping", {"OD1OD2": None}, "UniformlyElliptic"),
}

THEOREM_KEYS = {"id": None, "beta": 2.0, "a": None, "kappa": None, "t0": 0.0, "b_branch": None, "N2": 10.0}
LAYOUT_KEYS = {"family": None, "constants": {}, "t0": None, "g_slope_eps": 0.1}
EXPECTED_KEYS = {"friction": None, "conditions": None}
DATA_KEYS = {"kind": "log_gaussian", "r_min": 0.1, "r_max": 10.0, "n": 3, "r0": 1.0, "sigma": 0.5,
             "u0": 1.0, "u1": 1.0}
GRID_KEYS = {
    "t_points": 201,
    "r_nodes": 160,
    "refine": True,
    "max_nodes": 5089,
    "ratio_start": None,
    "classify_horizon": None,
    "zone_xis": [0.05, 0.2, 1.0, 3.0, 10.0],
    "glue_xis": [0.2, 1.0, 3.0, 10.0],
    "glue_points": 401,
    "bound_xis": [0.5, 1.0, 2.0],
    "bound_points": 257,
    "symbol_xi": 1.0,
    "symbol_N": [1.0, 2.0, 4.0],
    "symbol_horizon": 50.0,
    "multiplier_xis": [0.01, 0.02, 0.04],
    "delta_xis": [0.5, 1.0, 2.0],
    "transform_xis": [0.5, 2.0],
    "mode_limit": {"xi": 1.0, "u0": 1.0, "u1": 0.0, "horizon": 40.0},
}
TOL_KEYS = {
    "rel_tol": 1e-8,
    "quad_tol": 1e-6,
    "window_factor": envelopes.STABILITY_FACTOR,
    "energy_factor": 10.0,
    "slope_limit": None,
    "limit_min": 0.1,
    "symbol_tol": 1e-6,
    "transform_tol": 1e-6,
    "multiplier_eps": 0.1,
    "decay_epsilon": 0.5,
}
TOP_KEYS = ("name", "description", "b", "g", "expected", "layout", "theorem", "data", "grids",
            "tolerances", "horizon", "checks")

CHECKS = {
    "energy": "per-mode energy non-increasing and dissipation identity within energy_factor x rel_tol",
    "quadrature": "doubling the r-grid changes every norm by at most quad_tol (relative)",
    "envelope": "norm / theorem envelope ratios for u and u_t finite and window-stable",
    "decay_slope": "tail log-log slope of the raw u norm at most slope_limit",
    "glue": "brute-force mode solves stay under the glued per-zone envelope (window-stable constant)",
    "inequalities": "pointwise zone inequalities of the layout have zero violations",
    "delta_asymptotics": "t/delta non-decreasing on the tail and int 1/delta <= c t/delta with stable c",
    "multiplier_decay": "energy decay inequality of the multiplier method on dissipative modes",
    "mode_limit": "mode at the configured xi converges to a limit of magnitude >= limit_min",
    "transforms": "direct mode solve agrees with the back-transformed v and w solves",
}
for _bid, _info in envelopes.BOUNDS.items():
    CHECKS[f"bound:{_bid}"] = f"per-zone mode bound in {_info.zone} of {_info.family}: window-stable constant"
for _sid in envelopes.SYMBOL_CHECKS:
    CHECKS[f"symbol:{_sid}"] = "remainder integral over the elliptic zone finite and non-increasing in N"
for _kid in envelopes.MULTIPLIERS:
    CHECKS[f"multiplier:{_kid}"] = "multiplier properties hold with the reference lambda1"

_DEFAULT_CHECKS = {
    "T2.1": ["bound:ell_scattering", "bound:pd_scattering", "symbol:pd_remainder"],
    "T2.2": [],
    "T3.1": [],
    "T3.2": ["bound:hyp_noneffective", "bound:diss_noneffective", "inequalities", "delta_asymptotics"],
    "T4.1": [],
    "T4.2": ["inequalities", "symbol:ell_remainder", "multiplier:xi2_over_b", "multiplier:b",
             "multiplier_decay"],
    "T5.1": [],
    "T5.2": ["inequalities"],
    "T5.3": ["inequalities", "mode_limit"],
    "T5.4": [],
}


def default_checks(theorem: str | None, slope_limit: float | None = None) -> list[str]:
    base = ["energy", "quadrature"]
    if theorem is None:
        return base
    extra = [] if theorem == "T2.2" else ["glue"]
    if slope_limit is not None:
        extra.append("decay_slope")
    return base + ["envelope"] + extra + _DEFAULT_CHECKS[theorem]


def list_checks() -> list[tuple[str, str]]:
    rows = sorted(CHECKS.items())
    for fam, ids in envelopes.INEQUALITIES.items():
        rows.extend((f"inequality:{i}", f"reported by 'inequalities' on {fam}") for i in ids)
    return rows


# --------------------------------------------------------- scenario

@dataclass
class Scenario:
    name: str
    b: dict
    g: dict
    expected: dict
    layout: dict
    theorem: dict | None
    data: dict
    grids: dict
    tolerances: dict
    horizon: float
    checks: list
    description: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "description": self.description, "b": self.b, "g": self.g,
            "expected": self.expected, "layout": self.layout, "theorem": self.theorem, "data": self.data,
            "grids": self.grids, "tolerances": self.tolerances, "horizon": self.horizon, "checks": self.checks,
        }

    @property
    def theorem_id(self) -> str | None:
        return None if self.theorem is None else self.theorem["id"]

    def profiles(self):
        if "profiles" not in self._cache:
            self._cache["profiles"] = (profile_from_spec(self.b), profile_from_spec(self.g))
        return self._cache["profiles"]

    def zone_layout(self) -> zones.ZoneLayout:
        if "layout" not in self._cache:
            b, g = self.profiles()
            lay = self.layout
            extra = {} if lay["t0"] is None else {"t0": lay["t0"]}
            self._cache["layout"] = zones.make_layout(lay["family"], b, g, self.horizon, lay["g_slope_eps"],
                                                      **lay["constants"], **extra)
        return self._cache["layout"]

    def envelope_spec(self) -> envelopes.EnvelopeSpec | None:
        if self.theorem is None:
            return None
        if "spec" not in self._cache:
            b, g = self.profiles()
            th = self.theorem
            self._cache["spec"] = envelopes.EnvelopeSpec(th["id"], b, g, th["beta"], th["a"], th["kappa"],
                                                         th["b_branch"], th["t0"], th["N2"])
        return self._cache["spec"]

    def data_profile(self, nodes: int | None = None) -> norms.DataProfile:
        return norms.DataProfile(nodes=nodes or self.grids["r_nodes"], **self.data)

    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.grids["t_points"])


def _fill(section: str, given, defaults: dict) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ScenarioError(f"'{section}' must be an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ScenarioError(f"unknown keys in '{section}': {unknown}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def scenario_from_dict(raw: dict, source: str = "<dict>") -> Scenario:
    """Validate a raw config, fill defaults and build every derived object once."""
    if not isinstance(raw, dict):
        raise ScenarioError(f"{source}: top level must be an object")
    unknown = sorted(set(raw) - set(TOP_KEYS))
    if unknown:
        raise ScenarioError(f"{source}: unknown keys {unknown}")
    for key in ("b", "g"):
        if key not in raw:
            raise ScenarioError(f"{source}: missing required key '{key}'")
    theorem = raw.get("theorem")
    if isinstance(theorem, str):
        theorem = {"id": theorem}
    if theorem is not None:
        theorem = _fill("theorem", theorem, THEOREM_KEYS)
        if theorem["id"] not in THEOREM_DEFAULTS:
            raise ScenarioError(f"{source}: unknown theorem id {theorem['id']!r}")
        if theorem["id"] in ("T2.2", "T3.2") and theorem["a"] is None:
            theorem["a"] = 0.5
    th_id = None if theorem is None else theorem["id"]
    friction, conds, family = THEOREM_DEFAULTS.get(th_id, (None, {}, "TwoZone"))

    expected = _fill("expected", raw.get("expected"), EXPECTED_KEYS)
    if "expected" not in raw or "friction" not in (raw.get("expected") or {}):
        expected["friction"] = friction
    if expected["conditions"] is None:
        expected["conditions"] = copy.deepcopy(conds)
    for set_id, ids in expected["conditions"].items():
        if set_id not in classify.CONDITION_SETS:
            raise ScenarioError(f"{source}: unknown condition set {set_id!r}")
        if ids is not None and not set(ids) <= set(classify.CONDITION_SETS[set_id]):
            raise ScenarioError(f"{source}: {set_id} has no conditions {sorted(set(ids) - set(classify.CONDITION_SETS[set_id]))}")
    if expected["friction"] is not None and expected["friction"] not in classify.KINDS:
        raise ScenarioError(f"{source}: unknown friction class {expected['friction']!r}")

    layout = _fill("layout", raw.get("layout"), LAYOUT_KEYS)
    if layout["family"] is None:
        layout["family"] = family
    data = _fill("data", raw.get("data"), DATA_KEYS)
    grids = _fill("grids", raw.get("grids"), GRID_KEYS)
    tolerances = _fill("tolerances", raw.get("tolerances"), TOL_KEYS)
    horizon = raw.get("horizon", 10.0)
    if not isinstance(horizon, (int, float)) or not horizon > 0:
        raise ScenarioError(f"{source}: horizon must be a positive number")
    checks = raw.get("checks")
    if checks is None:
        checks = default_checks(th_id, tolerances["slope_limit"])
    unknown_checks = sorted(set(checks) - set(CHECKS))
    if unknown_checks:
        raise ScenarioError(f"{source}: unknown checks {unknown_checks}; see 'check --list'")
    if theorem is None and any(c in ("envelope", "glue", "decay_slope") for c in checks):
        raise ScenarioError(f"{source}: envelope checks need a theorem")

    sc = Scenario(str(raw.get("name", Path(source).stem)), copy.deepcopy(raw["b"]), copy.deepcopy(raw["g"]),
                  expected, layout, theorem, data, grids, tolerances, float(horizon), list(checks),
                  str(raw.get("description", "")))
    try:
        sc.profiles()
        sc.zone_layout()
        sc.envelope_spec()
        sc.data_profile()
    except (ProfileError, zones.ZoneError, envelopes.EnvelopeError, norms.NormError, TypeError) as exc:
        raise ScenarioError(f"{source}: {exc}") from exc
    if not (1e-12 <= tolerances["rel_tol"] <= 1e-3):
        raise ScenarioError(f"{source}: rel_tol must lie in [1e-12, 1e-3]")
    if grids["t_points"] < 9 or grids["r_nodes"] < 3:
        raise ScenarioError(f"{source}: need t_points >= 9 and r_nodes >= 3")
    return sc


def bundled_scenarios() -> list[str]:
    root = resources.files("dampwave") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def resolve_path(path) -> Path | resources.abc.Traversable:
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.suffix == ".json" else p.name + ".json"
    cand = resources.files("dampwave") / "scenarios" / name
    if cand.is_file():
        return cand
    raise ScenarioError(f"scenario file {path} not found (bundled: {', '.join(bundled_scenarios())})")


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    """Read a JSON scenario; ``overrides`` maps section -> {key: value} merged before validation."""
    src = resolve_path(path)
    text = src.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if overrides and isinstance(raw, dict):
        for section, values in overrides.items():
            merged = dict(raw.get(section) or {})
            merged.update(values)
            raw[section] = merged
    return scenario_from_dict(raw, str(path))


# ------------------------------------------------------------ sweep

def _solve_chunk(task):
    b_spec, g_spec, xis, u0, u1, t_grid, rel_tol, backend = task
    b, g = profile_from_spec(b_spec), profile_from_spec(g_spec)
    sols = modes.solve_modes(b, g, xis, u0, u1, t_grid, rel_tol, backend)
    U = np.stack([s.u_hat for s in sols])
    Ut = np.stack([s.ut_hat for s in sols])
    diag = np.array([[s.energy_residual, float(s.energy_monotone()), s.floor_hits, s.steps,
                      np.count_nonzero(s.reduced)] for s in sols])
    return U, Ut, diag


def solve_band(sc: Scenario, r: np.ndarray, t_grid: np.ndarray, workers: int = 1, backend=None):
    """Mode solves for every r node in fixed chunks; output is independent of ``workers``."""
    dp = sc.data_profile()
    u0, u1 = dp.u0_hat(r), dp.u1_hat(r)
    tasks = [(sc.b, sc.g, r[i:i + CHUNK], u0[i:i + CHUNK], u1[i:i + CHUNK], t_grid,
              sc.tolerances["rel_tol"], backend) for i in range(0, r.size, CHUNK)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_solve_chunk, tasks))
    else:
        parts = [_solve_chunk(t) for t in tasks]
    U = np.concatenate([p[0] for p in parts]).T
    Ut = np.concatenate([p[1] for p in parts]).T
    diag = np.concatenate([p[2] for p in parts])
    return U, Ut, diag


def _interleave(coarse, fine_new, axis_len):
    out = np.empty(coarse.shape[:-1] + (axis_len,), dtype=coarse.dtype)
    out[..., 0::2] = coarse
    out[..., 1::2] = fine_new
    return out


def _rel_change(a, b):
    scale = np.maximum(np.abs(b), 1e-12 * np.max(np.abs(b)) if b.size else 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(scale > 0, np.abs(a - b) / scale, 0.0)
    return float(np.max(d)) if d.size else 0.0


@dataclass
class Sweep:
    t: np.ndarray
    r: np.ndarray
    U: np.ndarray  # (T, R)
    Ut: np.ndarray
    diag: np.ndarray  # (R, 5): energy residual, monotone flag, floor hits, steps, reduced samples
    orders: tuple
    norm_u: np.ndarray
    norm_ut: np.ndarray
    refinements: list

    @property
    def quadrature_change(self) -> float:
        return self.refinements[-1]["change"] if len(self.refinements) > 1 else math.nan

    def solver_summary(self) -> dict:
        return {
            "modes": int(self.r.size),
            "max_energy_residual": float(np.max(self.diag[:, 0])),
            "all_energy_monotone": bool(np.all(self.diag[:, 1] > 0.5)),
            "floor_hits": int(np.sum(self.diag[:, 2])),
            "max_steps": int(np.max(self.diag[:, 3])),
            "reduced_samples": int(np.sum(self.diag[:, 4])),
        }


def run_sweep(sc: Scenario, workers: int = 1, backend=None) -> Sweep:
    """Solve the banded data on a log r-grid, doubling it until the norms settle."""
    dp = sc.data_profile()
    n = dp.n
    spec = sc.envelope_spec()
    orders = spec.lhs_orders() if spec is not None else (1.0, 0.0)
    t = sc.t_grid()
    r = dp.grid()
    U, Ut, diag = solve_band(sc, r, t, workers, backend)
    nu = norms.field_norm_series(r, U, orders[0], n)
    nut = norms.field_norm_series(r, Ut, orders[1], n)
    refinements = [{"nodes": int(r.size), "change": math.nan}]
    g = sc.grids
    while g["refine"] and 2 * r.size - 1 <= g["max_nodes"]:
        rf = norms.refine_grid(r)
        Un, Utn, dn = solve_band(sc, rf[1::2], t, workers, backend)
        U, Ut = _interleave(U, Un, rf.size), _interleave(Ut, Utn, rf.size)
        d2 = np.empty((rf.size, diag.shape[1]))
        d2[0::2], d2[1::2] = diag, dn
        diag, r = d2, rf
        nu_f = norms.field_norm_series(r, U, orders[0], n)
        nut_f = norms.field_norm_series(r, Ut, orders[1], n)
        change = max(_rel_change(nu, nu_f), _rel_change(nut, nut_f))
        refinements.append({"nodes": int(r.size), "change": change})
        nu, nut = nu_f, nut_f
        if change <= sc.tolerances["quad_tol"]:
            break
    return Sweep(t, r, U, Ut, diag, orders, nu, nut, refinements)


def envelope_series(sc: Scenario, sweep: Sweep):
    spec = sc.envelope_spec()
    dp = sc.data_profile()
    t = sweep.t
    start = sc.grids["ratio_start"]
    if start is None:
        start = spec.t0
    sel = t >= start
    env_u, env_ut = envelopes.theorem_envelope(spec, t[sel])
    cache = {}

    def norm_of(dn):
        if dn.label() not in cache:
            cache[dn.label()] = norms.data_norm_refined(dp, dn.which, dn.order, kind=dn.kind, r=sweep.r,
                                                        tol=sc.tolerances["quad_tol"])
        return cache[dn.label()]

    eu = np.full(t.shape, np.nan)
    eut = np.full(t.shape, np.nan)
    eu[sel] = env_u.evaluate(norm_of)
    eut[sel] = env_ut.evaluate(norm_of)
    return eu, eut, sel, cache


# ------------------------------------------------------------ checks

def _num(x):
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (float, int, np.floating, np.integer, bool, np.bool_)) or obj is None:
        return _num(obj)
    return obj


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def check_energy(sc, sweep, **_):
    tol = sc.tolerances["energy_factor"] * sc.tolerances["rel_tol"]
    s = sweep.solver_summary()
    ok = s["all_energy_monotone"] and s["max_energy_residual"] <= tol
    return {"verdict": _verdict(ok), "max_energy_residual": s["max_energy_residual"], "limit": tol,
            "all_monotone": s["all_energy_monotone"], "modes": s["modes"]}


def check_quadrature(sc, sweep, **_):
    ch = sweep.quadrature_change
    ok = math.isfinite(ch) and ch <= sc.tolerances["quad_tol"]
    return {"verdict": _verdict(ok), "change": ch, "limit": sc.tolerances["quad_tol"],
            "nodes": int(sweep.r.size), "refinements": sweep.refinements}


def check_envelope(sc, sweep, series, **_):
    t = sweep.t
    out = {}
    ok = True
    sel = series["sel"]
    for key, nrm, env in (("u", sweep.norm_u, series["env_u"]), ("ut", sweep.norm_ut, series["env_ut"])):
        st = norms.ratio_series(t[sel], nrm[sel], env[sel])
        with np.errstate(divide="ignore"):
            lr = np.log(st.ratio)
        lr = np.where(np.isfinite(st.ratio), lr, np.nan)
        keep = np.isfinite(lr) | (st.ratio == 0)
        C, cp, cl, v = envelopes.window_verdict(t[sel][keep], np.where(st.ratio[keep] > 0, lr[keep], -np.inf),
                                                sc.tolerances["window_factor"])
        out[key] = dict(st.to_dict(), window_prev=cp, window_last=cl, verdict=v)
        ok &= v == "pass" and st.excluded == 0
    out["verdict"] = _verdict(ok)
    out["data_norms"] = series["data_norms"]
    return out


def check_decay_slope(sc, sweep, series, **_):
    limit = sc.tolerances["slope_limit"]
    sel = series["sel"] & (sweep.t > 0)
    slope = norms.tail_slope(sweep.t[sel], sweep.norm_u[sel])
    if limit is None:
        return {"verdict": "fail", "slope": slope, "detail": "no slope_limit configured"}
    return {"verdict": _verdict(math.isfinite(slope) and slope <= limit), "slope": slope, "limit": limit}


def check_glue(sc, backend=None, **_):
    spec = sc.envelope_spec()
    layout = sc.zone_layout()
    t = np.linspace(0.0, sc.horizon, sc.grids["glue_points"])
    rows, ok, worst = [], True, 0.0
    factor = sc.tolerances["window_factor"]
    for xi in sc.grids["glue_xis"]:
        glued = envelopes.glue_mode_envelope(spec, layout, xi, t)
        for u0, u1 in ((1.0, 0.0), (0.0, 1.0)):
            sol = modes.solve_mode(layout.b, layout.g, xi, u0, u1, t, sc.tolerances["rel_tol"], backend)
            lu, lut = glued.log_bound(u0, u1)
            base = spec.beta * math.log(xi)
            with np.errstate(divide="ignore"):
                obs_u = base + np.log(np.abs(sol.u_hat))
                obs_ut = base + np.log(np.abs(sol.ut_hat))
            for key, obs, bound in (("u", obs_u, lu), ("ut", obs_ut, lut)):
                lr = obs[1:] - bound[1:]
                lr = np.where(np.isneginf(obs[1:]), -np.inf, lr)
                C, cp, cl, v = envelopes.window_verdict(t[1:], lr, factor)
                rows.append({"xi": xi, "data": [u0, u1], "field": key, "constant": C, "window_prev": cp,
                             "window_last": cl, "verdict": v, "chain": [iv.zone for iv in glued.chain]})
                ok &= v == "pass"
                worst = max(worst, C) if math.isfinite(C) else math.inf
    return {"verdict": _verdict(ok), "constant": worst, "cases": rows}


def check_bound(bound_id):
    def run(sc, backend=None, **_):
        bc = envelopes.bound_check(bound_id, sc.zone_layout(), sc.grids["bound_xis"], sc.horizon,
                                   points=sc.grids["bound_points"], rel_tol=sc.tolerances["rel_tol"],
                                   backend=backend)
        return bc.to_dict()
    return run


def check_inequalities(sc, **_):
    res = envelopes.pointwise_inequality_suite(sc.zone_layout())
    if not res:
        return {"verdict": "fail", "detail": f"no inequalities for {sc.layout['family']}", "results": []}
    ok = all(r.passed for r in res)
    return {"verdict": _verdict(ok), "results": [r.to_dict() for r in res]}


def check_symbol(check_id):
    def run(sc, **_):
        # the tail test needs room past the zone entry, so integrate on a longer layout
        base = sc.zone_layout()
        T = max(sc.horizon, sc.grids["symbol_horizon"])
        extra = {} if base.t0 is None else {"t0": base.t0}
        layout = zones.make_layout(base.family, base.b, base.g, T, sc.layout["g_slope_eps"],
                                   **base.constants, **extra)
        xi = sc.grids["symbol_xi"]
        vals = [envelopes.symbol_integrability(check_id, layout, xi, N) for N in sc.grids["symbol_N"]]
        values = [v.value for v in vals]
        ok = all(v.converges and math.isfinite(v.value) for v in vals)
        ok &= all(b <= a * (1 + 1e-9) for a, b in zip(values, values[1:]))
        out = {"xi": xi, "N": sc.grids["symbol_N"], "values": values, "results": [v.to_dict() for v in vals]}
        if check_id == "pd_remainder":
            # the integrand is -2 d/dt(1/(G xi^2)), so the tail integral from G xi^2 = N is 2/N
            dev = [abs(v - 2.0 / N) for v, N in zip(values, sc.grids["symbol_N"])]
            out["closed_form_deviation"] = max(dev)
            ok &= max(dev) <= sc.tolerances["symbol_tol"]
        out["verdict"] = _verdict(ok)
        return out
    return run


def check_multiplier(K_id):
    def run(sc, **_):
        fit = envelopes.multiplier_check(K_id, sc.zone_layout(), eps=sc.tolerances["multiplier_eps"])
        return fit.to_dict()
    return run


def check_multiplier_decay(sc, backend=None, **_):
    layout = sc.zone_layout()
    t = np.linspace(0.0, sc.horizon, 4 * sc.grids["t_points"] - 3)
    rows, ok, applicable = [], True, 0
    for xi in sc.grids["multiplier_xis"]:
        sol = modes.solve_mode(layout.b, layout.g, xi, 1.0, 0.0, t, sc.tolerances["rel_tol"], backend)
        for K_id in envelopes.MULTIPLIERS:
            dc = envelopes.multiplier_decay_check(sol, K_id, layout, epsilon=sc.tolerances["decay_epsilon"],
                                                  eps=sc.tolerances["multiplier_eps"])
            rows.append(dict(dc.to_dict(), xi=xi))
            if dc.applicable:
                applicable += 1
                ok &= dc.verdict == "pass"
    ok &= applicable > 0
    return {"verdict": _verdict(ok), "applicable": applicable, "cases": rows}


def check_delta(sc, **_):
    b, g = sc.profiles()
    t = np.linspace(0.0, sc.horizon, 4 * sc.grids["t_points"] - 3)
    rows, ok = [], True
    for xi in sc.grids["delta_xis"]:
        d = envelopes.delta_asymptotics(b, g, xi, t)
        rows.append({"xi": xi, "monotone_tail": d.monotone_tail, "constant": d.constant,
                     "window_prev": d.window_prev, "window_last": d.window_last, "stable": d.stable})
        ok &= d.monotone_tail and d.stable
    return {"verdict": _verdict(ok), "cases": rows}


def check_mode_limit(sc, backend=None, **_):
    b, g = sc.profiles()
    cfg = sc.grids["mode_limit"]
    H = float(cfg.get("horizon", sc.horizon))
    t = np.linspace(0.0, H, 801)
    sol = modes.solve_mode(b, g, cfg["xi"], cfg["u0"], cfg["u1"], t, sc.tolerances["rel_tol"], backend)
    lim = modes.mode_limit(sol)
    ok = lim.converged and abs(lim.value) >= sc.tolerances["limit_min"]
    return {"verdict": _verdict(ok), "value": lim.value, "converged": lim.converged, "ratio": lim.ratio,
            "window": list(lim.window), "floor_hits": sol.floor_hits, "limit_min": sc.tolerances["limit_min"]}


def check_transforms(sc, backend=None, **_):
    b, g = sc.profiles()
    rows, ok = [], True
    for xi in sc.grids["transform_xis"]:
        tc = modes.check_transforms(b, g, xi, 1.0, 0.5, sc.horizon, sc.tolerances["rel_tol"])
        rows.append({"xi": xi, "v_deviation": tc.v_deviation, "w_deviation": tc.w_deviation,
                     "horizon": tc.horizon})
        ok &= tc.max_deviation <= sc.tolerances["transform_tol"]
    return {"verdict": _verdict(ok), "cases": rows}


CHECK_RUNNERS = {
    "energy": check_energy,
    "quadrature": check_quadrature,
    "envelope": check_envelope,
    "decay_slope": check_decay_slope,
    "glue": check_glue,
    "inequalities": check_inequalities,
    "delta_asymptotics": check_delta,
    "multiplier_decay": check_multiplier_decay,
    "mode_limit": check_mode_limit,
    "transforms": check_transforms,
}
CHECK_RUNNERS.update({f"bound:{k}": check_bound(k) for k in envelopes.BOUNDS})
CHECK_RUNNERS.update({f"symbol:{k}": check_symbol(k) for k in envelopes.SYMBOL_CHECKS})
CHECK_RUNNERS.update({f"multiplier:{k}": check_multiplier(k) for k in envelopes.MULTIPLIERS})
_NEEDS_SWEEP = {"energy", "quadrature", "envelope", "decay_slope"}


# ------------------------------------------------------- orchestration

def run_classification(sc: Scenario) -> dict:
    b, g = sc.profiles()
    horizon = sc.grids["classify_horizon"]
    out = {"expected": sc.expected}
    fr = classify.classify_friction(b, horizon)
    out["friction"] = fr.to_dict()
    conds, ok, reasons = {}, True, []
    for set_id, ids in sc.expected["conditions"].items():
        rep = classify.check_conditions(set_id, b, g, horizon)
        conds[set_id] = rep.to_dict()
        good = rep.passed if ids is None else rep.passed_subset(ids)
        if not good:
            ok = False
            reasons.append(f"{set_id}{'' if ids is None else ' ' + ','.join(ids)} not satisfied")
    if sc.expected["friction"] is not None and fr.kind != sc.expected["friction"]:
        ok = False
        reasons.append(f"friction is {fr.kind}, expected {sc.expected['friction']}")
    out["conditions"] = conds
    out["matches"] = ok
    out["reasons"] = reasons
    return out


def zone_summary(sc: Scenario) -> dict:
    layout = sc.zone_layout()
    chains = {}
    for xi in sc.grids["zone_xis"]:
        try:
            chains[f"{xi:g}"] = [iv.to_dict() for iv in zones.zone_chain(layout, xi)]
        except zones.ZoneError as exc:
            chains[f"{xi:g}"] = {"error": str(exc)}
    return {"layout": layout.to_dict(), "chains": chains}


def zone_curves(sc: Scenario, points: int = 64) -> list[tuple]:
    layout = sc.zone_layout()
    rows = []
    for xi in np.geomspace(1e-2, 1e2, points):
        for curve in layout.curves:
            try:
                tc = zones.separating_time(layout, curve, float(xi))
            except zones.ZoneError:
                tc = math.nan
            rows.append((float(xi), curve, tc))
    return rows


@dataclass
class CheckReport:
    scenario: dict
    classification: dict | None = None
    zones: dict | None = None
    sweep: dict | None = None
    checks: dict = field(default_factory=dict)
    overall: str = "fail"
    reason: str = ""
    numerical_failure: bool = False
    series: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return self.overall == "pass"

    def to_dict(self) -> dict:
        out = {
            "version": __version__,
            "scenario": self.scenario,
            "overall": self.overall,
            "reason": self.reason,
            "numerical_failure": self.numerical_failure,
            "classification": self.classification,
            "zones": self.zones,
            "sweep": self.sweep,
            "checks": self.checks,
        }
        if "norms" in self.series:
            out["norms"] = self.series["norms"]
        return _clean(out)


def _norm_rows(sweep: Sweep, series: dict | None):
    t = sweep.t
    eu = series["env_u"] if series else np.full(t.shape, np.nan)
    eut = series["env_ut"] if series else np.full(t.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ru, rut = sweep.norm_u / eu, sweep.norm_ut / eut
    return {"t": t, "norm_u": sweep.norm_u, "norm_ut": sweep.norm_ut, "envelope_u": eu, "envelope_ut": eut,
            "ratio_u": ru, "ratio_ut": rut}


def run_scenario(sc: Scenario, workers: int = 1, checks=None, backend=None, sweep: bool = True) -> CheckReport:
    """Classification, zones, the mode sweep with norms, then every selected check."""
    selected = list(sc.checks if checks is None else checks)
    rep = CheckReport(scenario=sc.to_dict())
    rep.classification = run_classification(sc)
    rep.zones = zone_summary(sc)
    if not rep.classification["matches"]:
        rep.reason = "hypothesis violation: " + "; ".join(rep.classification["reasons"])
        for cid in selected:
            rep.checks[cid] = {"verdict": "skipped", "detail": "hypothesis violation"}
        return rep
    sw = series = None
    if sweep and (any(c in _NEEDS_SWEEP for c in selected) or checks is None):
        try:
            sw = run_sweep(sc, workers, backend)
        except modes.ModeError as exc:
            rep.numerical_failure = True
            rep.reason = f"numerical failure in sweep: {exc}"
            for cid in selected:
                rep.checks[cid] = {"verdict": "error", "detail": str(exc)}
            return rep
        if sc.theorem is not None:
            eu, eut, sel, dn = envelope_series(sc, sw)
            series = {"env_u": eu, "env_ut": eut, "sel": sel, "data_norms": dn}
        rep.sweep = {"orders": list(sw.orders), "nodes": int(sw.r.size), "refinements": sw.refinements,
                     "solver": sw.solver_summary()}
        rep.series["norms"] = _norm_rows(sw, series)
        rep.series["modes"] = _mode_rows(sw)
    for cid in selected:
        runner = CHECK_RUNNERS[cid]
        if cid in _NEEDS_SWEEP and sw is None:
            rep.checks[cid] = {"verdict": "skipped", "detail": "no sweep"}
            continue
        try:
            rep.checks[cid] = runner(sc, sweep=sw, series=series, backend=backend)
        except modes.ModeError as exc:
            rep.numerical_failure = True
            rep.checks[cid] = {"verdict": "error", "detail": f"numerical failure: {exc}"}
        except (envelopes.EnvelopeError, zones.ZoneError, classify.ConditionError, norms.NormError) as exc:
            rep.checks[cid] = {"verdict": "error", "detail": str(exc)}
    failed = [c for c, r in rep.checks.items() if r.get("verdict") != "pass"]
    rep.overall = "fail" if failed or rep.numerical_failure else "pass"
    if failed and not rep.reason:
        rep.reason = "failed checks: " + ", ".join(failed)
    return rep


def _mode_rows(sw: Sweep, probes: int = 16):
    idx = np.unique(np.linspace(0, sw.r.size - 1, min(probes, sw.r.size)).round().astype(int))
    return {"xi": sw.r[idx], "t": sw.t, "u_hat": sw.U[:, idx], "ut_hat": sw.Ut[:, idx]}


# ------------------------------------------------------------- emit

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    x = float(x)
    return repr(x) if math.isfinite(x) else str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _write_csv(path: Path, header, rows):
    path.write_text(csv_text(header, rows))


def report_json(report: CheckReport) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"


MODE_HEADER = ("t", "xi", "u_hat", "ut_hat", "energy", "zone")


def zone_lookup(sc: Scenario | None, xi: float):
    """Map t to the zone name of the chain of xi; empty when no layout applies."""
    chain = []
    if sc is not None:
        try:
            chain = zones.zone_chain(sc.zone_layout(), float(xi))
        except zones.ZoneError:
            chain = []

    def at(t):
        for iv in chain:
            if iv.start <= t < iv.end:
                return iv.zone
        return chain[-1].zone if chain and t >= chain[-1].start else ""
    return at


def mode_table(md: dict, sc: Scenario | None = None):
    """Rows (t, xi, u_hat, ut_hat, energy, zone) from arrays xi[j], t[i], u_hat[i, j], ut_hat[i, j]."""
    for j, xi in enumerate(md["xi"]):
        zone_of = zone_lookup(sc, xi)
        for i, t in enumerate(md["t"]):
            u, ut = md["u_hat"][i, j], md["ut_hat"][i, j]
            yield t, xi, u, ut, 0.5 * (ut * ut + xi * xi * u * u), zone_of(t)


NORM_HEADER = ("t", "norm_u", "norm_ut", "envelope_u", "envelope_ut", "ratio_u", "ratio_ut")


def emit(report: CheckReport, fmt: str, out, sc: Scenario | None = None) -> list[Path]:
    """Write report.json, or one CSV per series into the directory ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        p = out / "report.json"
        p.write_text(report_json(report))
        return [p]
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    nr = report.series.get("norms")
    if nr is not None:
        p = out / "norms.csv"
        _write_csv(p, NORM_HEADER, zip(*(nr[k] for k in NORM_HEADER)))
        written.append(p)
        ratios = out / "ratios.csv"
        _write_csv(ratios, ("t", "ratio_u", "ratio_ut"), zip(nr["t"], nr["ratio_u"], nr["ratio_ut"]))
        written.append(ratios)
    md = report.series.get("modes")
    if md is not None:
        p = out / "modes.csv"
        _write_csv(p, MODE_HEADER, mode_table(md, sc))
        written.append(p)
    if sc is not None:
        p = out / "zones.csv"
        _write_csv(p, ("xi", "curve", "time"), zone_curves(sc))
        written.append(p)
        p = out / "zone_chains.csv"
        rows = []
        for xi, chain in (report.zones or {}).get("chains", {}).items():
            if isinstance(chain, list):
                rows.extend((xi, iv["zone"], iv["start"], iv["end"]) for iv in chain)
        _write_csv(p, ("xi", "zone", "start", "end"), rows)
        written.append(p)
    p = out / "checks.csv"
    _write_csv(p, ("id", "verdict", "detail"),
               ((cid, r.get("verdict", ""), r.get("detail", "")) for cid, r in report.checks.items()))
    written.append(p)
    return written


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
