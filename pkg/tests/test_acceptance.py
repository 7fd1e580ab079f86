"""Acceptance criteria AC1-AC12; each test records one PASS/FAIL line shown after the run."""
import math
import time

import numpy as np
import pytest

from dampwave import envelopes as E, harness, modes, zones
from dampwave.coeffcalc import make_profile

from conftest import P, record

LIMIT_ORACLE = 0.46463087286899
ZERO = P("constant", c=0.0)


class BundledRuns:
    """Full default-check runs of the bundled scenarios, computed once and timed."""

    def __init__(self):
        self.reports, self.seconds = {}, {}

    def __call__(self, name):
        if name not in self.reports:
            sc = harness.load_scenario(name)
            t0 = time.perf_counter()
            self.reports[name] = harness.run_scenario(sc, workers=harness.default_workers())
            self.seconds[name] = time.perf_counter() - t0
        return self.reports[name]


@pytest.fixture(scope="session")
def runs():
    return BundledRuns()


def closed_form(p, xi, u0, u1, t):
    q = xi * xi
    disc = p * p - 4 * q
    if disc > 0:
        r1, r2 = (-p + math.sqrt(disc)) / 2, (-p - math.sqrt(disc)) / 2
        c1 = (u1 - r2 * u0) / (r1 - r2)
        return c1 * np.exp(r1 * t) + (u0 - c1) * np.exp(r2 * t)
    if disc == 0:
        a = -p / 2
        return (u0 + (u1 - a * u0) * t) * np.exp(a * t)
    a, w = -p / 2, math.sqrt(-disc) / 2
    return np.exp(a * t) * (u0 * np.cos(w * t) + (u1 - a * u0) / w * np.sin(w * t))


def random_profile(rng):
    fam = rng.choice(["constant", "power", "exp", "doubleexp"])
    c = float(rng.uniform(0.1, 2.0))
    if fam == "constant":
        return make_profile("constant", {"c": c})
    if fam == "power":
        return make_profile("power", {"c": c, "alpha": float(rng.uniform(-2.0, 1.0))})
    if fam == "exp":
        return make_profile("exp", {"c": c, "alpha": float(rng.uniform(-1.0, 1.0))})
    return make_profile("doubleexp", {"c": float(rng.uniform(0.1, 1.0)), "sign": float(rng.choice([-1.0, 1.0]))})


def envelope_bounded(check, key):
    r = check[key]
    return (r["verdict"] == "pass" and isinstance(r["sup"], float) and math.isfinite(r["sup"])
            and r["window_last"] <= harness.TOL_KEYS["window_factor"] * r["window_prev"])


def test_ac1_closed_form_modes():
    t = np.linspace(0.0, 10.0, 201)
    cases = [("undamped cos", 0.0, 3.0, 1.0, 0.0), ("undamped sin", 0.0, 3.0, 0.0, 3.0),
             ("critical", 2.0, 1.0, 1.0, 0.0), ("overdamped", 3.0, 1.0, 1.0, -0.5),
             ("underdamped", 1.0, 1.0, 1.0, -0.5), ("light", 0.3, 5.0, 0.5, 1.0)]
    start = time.perf_counter()
    worst = 0.0
    for _, p, xi, u0, u1 in cases:
        s = modes.solve_mode(P("constant", c=p), ZERO, xi, u0, u1, t, rel_tol=1e-10)
        ref = closed_form(p, xi, u0, u1, t)
        worst = max(worst, float(np.max(np.abs(s.u_hat - ref)) / np.max(np.abs(ref))))
    # viscoelastic route to the same critical mode
    s = modes.solve_mode(ZERO, P("constant", c=2.0), 1.0, 1.0, 0.0, t, rel_tol=1e-10)
    worst = max(worst, float(np.max(np.abs(s.u_hat - (1 + t) * np.exp(-t)))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 5.0
    record(1, ok, f"max rel error {worst:.2e} (<= 1e-8), runtime {elapsed:.2f}s (< 5s)")
    assert ok


def test_ac2_liouville_identity():
    rng = np.random.default_rng(20240601)
    draws = [(P("exp", c=1.0, alpha=1.0), ZERO, 1.0, 0.0, 5.0)]
    while len(draws) < 20:
        b, g = random_profile(rng), random_profile(rng)
        s = float(rng.uniform(0.0, 2.0))
        end = s + 4.0
        if any(p.family == "doubleexp" and p.params["sign"] > 0 for p in (b, g)):
            # b = e^{e^t} makes int b astronomically large past t = 2
            s, end = 0.25 * s, 2.0
        draws.append((b, g, float(rng.uniform(0.1, 5.0)), s, end))
    worst = 0.0
    for b, g, xi, s, t1 in draws:
        fm = modes.fundamental_matrix(b, g, xi, s, np.linspace(s, t1, 17))
        worst = max(worst, fm.liouville_error())
    ok = worst <= 1e-6
    record(2, ok, f"max det relative error {worst:.2e} over {len(draws)} draws incl. b=e^t on [0,5] (<= 1e-6)")
    assert ok


def test_ac3_energy_on_bundled_sweeps(runs):
    bad, worst = [], 0.0
    for name in harness.bundled_scenarios():
        rep = runs(name)
        chk = rep.checks.get("energy")
        limit = 10 * rep.scenario["tolerances"]["rel_tol"]
        if chk is None or chk["verdict"] != "pass" or not chk["all_monotone"] or chk["max_energy_residual"] > limit:
            bad.append(name)
        if chk is not None:
            worst = max(worst, chk["max_energy_residual"] / limit)
    ok = not bad
    record(3, ok, f"{len(harness.bundled_scenarios())} scenarios, worst residual {worst:.2f} x (10 x rel_tol)"
           + (f"; failing {bad}" if bad else ""))
    assert ok


def test_ac4_transform_consistency():
    rng = np.random.default_rng(7)
    draws = [(ZERO, P("exp", c=1.0, alpha=1.0), 0.5), (P("power", c=1.0, alpha=-2.0), ZERO, 2.0)]
    while len(draws) < 10:
        draws.append((random_profile(rng), random_profile(rng), float(rng.uniform(0.1, 5.0))))
    worst = 0.0
    for b, g, xi in draws:
        tc = modes.check_transforms(b, g, xi, 1.0, 0.5, 10.0, rel_tol=1e-10)
        worst = max(worst, tc.max_deviation)
    ok = worst <= 1e-6
    record(4, ok, f"max v/w back-transform deviation {worst:.2e} over {len(draws)} draws (<= 1e-6)")
    assert ok


def test_ac5_scattering_envelope(runs):
    rep = runs("t21_scattering")
    elapsed = runs.seconds["t21_scattering"]
    env = rep.checks["envelope"]
    ok = (envelope_bounded(env, "u") and envelope_bounded(env, "ut") and rep.scenario["horizon"] <= 10
          and rep.scenario["theorem"]["beta"] == 2 and rep.scenario["data"]["n"] == 3 and elapsed < 60.0)
    record(5, ok, f"sup ratio u {env['u']['sup']:.3g}, u_t/g {env['ut']['sup']:.3g}, windows "
                  f"{env['u']['window_prev']:.3g}->{env['u']['window_last']:.3g}; runtime {elapsed:.1f}s (< 60s)")
    assert ok


def test_ac6_noneffective_rate(runs):
    rep = runs("t32_noneffective_decaying_g")
    env, slope = rep.checks["envelope"], rep.checks["decay_slope"]
    t = np.array([1.0, 15.0, 100.0])
    spec = harness.load_scenario("t32_noneffective_decaying_g").envelope_spec()
    fac = E.theorem_envelope(spec, t)[0].terms[0].factor
    rate_ok = np.allclose(fac, (1.0 + t) ** -0.25, rtol=1e-10)
    ok = (envelope_bounded(env, "u") and rate_ok and rep.scenario["grids"]["ratio_start"] == 1
          and rep.scenario["horizon"] == 100 and slope["slope"] <= -0.25 + 0.1)
    record(6, ok, f"sup ratio {env['u']['sup']:.3g} on [1,100], tail slope {slope['slope']:.3f} (<= -0.15)")
    assert ok


def test_ac7_effective_rate(runs):
    rep = runs("t42_effective_decaying_g")
    env, slope = rep.checks["envelope"], rep.checks["decay_slope"]
    data = rep.scenario["data"]
    ok = (envelope_bounded(env, "u") and rep.scenario["theorem"]["t0"] == 0 and rep.scenario["horizon"] == 100
          and data["r_min"] == 0.05 and data["r_max"] == 0.5 and slope["slope"] <= -1.5 + 0.2)
    record(7, ok, f"sup ratio {env['u']['sup']:.3g} on [1,100], tail slope {slope['slope']:.3f} (<= -1.3)")
    assert ok


def test_ac8_overdamping(runs):
    rep = runs("t53_overdamping_decaying_g")
    env, lim = rep.checks["envelope"], rep.checks["mode_limit"]
    stiff = runs("t54_overdamping_doubleexp_b")
    lim_ok = lim["verdict"] == "pass" and lim["converged"] and abs(lim["value"]) > 0.1
    oracle_ok = abs(lim["value"] - LIMIT_ORACLE) <= 1e-6
    stiff_ok = (stiff.passed and not stiff.numerical_failure and stiff.scenario["horizon"] == 3
                and stiff.sweep["solver"]["floor_hits"] == 0)
    ok = envelope_bounded(env, "u") and lim_ok and oracle_ok and stiff_ok
    record(8, ok, f"T5.3 sup ratio {env['u']['sup']:.3g}, limit {lim['value']:.10f} (|c| > 0.1, oracle "
                  f"{LIMIT_ORACLE}); T5.4 floor hits {stiff.sweep['solver']['floor_hits']}")
    assert ok


def test_ac9_pointwise_inequalities():
    results = []
    for name in ("t32_noneffective_decaying_g", "t42_effective_decaying_g", "t53_overdamping_decaying_g"):
        results += E.pointwise_inequality_suite(harness.load_scenario(name).zone_layout(), points=10_000)
    ids = {r.ineq_id for r in results}
    needed = {"effective_backtransform", "overdamping_backtransform", "d_lower", "d_upper", "jbg_lower",
              "jbg_upper", "h_lower", "h_upper", "p_lower", "p_upper", "p_constant"}
    grids_ok = all(r.points >= 10_000 for r in results if r.ineq_id != "p_constant")
    violations = sum(r.max_violation > 0 for r in results)
    fk = E.f_kappa(0.1)
    ok = needed <= ids and grids_ok and violations == 0 and abs(fk - 0.3797) <= 1e-4
    record(9, ok, f"{len(results)} inequalities on 10^4-point grids, {violations} violations; "
                  f"f(0.1) = {fk:.6f} (0.3797 +- 1e-4)")
    assert ok


def test_ac10_multipliers():
    sc = harness.load_scenario("t42_effective_decaying_g")
    layout = sc.zone_layout()
    fit = E.multiplier_check("xi2_over_b", layout, eps=0.1)
    fit_b = E.multiplier_check("b", layout, eps=0.1)
    t = np.linspace(0.0, sc.horizon, 4 * sc.grids["t_points"] - 3)
    decays = []
    for xi in sc.grids["multiplier_xis"]:
        sol = modes.solve_mode(layout.b, layout.g, xi, 1.0, 0.0, t, sc.tolerances["rel_tol"])
        for K_id in E.MULTIPLIERS:
            dc = E.multiplier_decay_check(sol, K_id, layout, epsilon=0.5)
            if dc.applicable:
                decays.append(dc)
    ok = (abs(fit.lambdas[0] - 0.2475) <= 1e-12 and fit.verdict == "pass" and fit_b.verdict == "pass"
          and all(math.isfinite(x) for x in fit.lambdas + fit_b.lambdas)
          and decays and all(d.verdict == "pass" for d in decays))
    record(10, ok, f"lambda1 {fit.lambdas[0]:.15f} (0.2475 +- 1e-12), K=b lambda1 {fit_b.lambdas[0]:g}; "
                   f"decay inequality on {len(decays)} dissipative modes")
    assert ok


def test_ac11_symbol_integrability():
    g = P("exp", c=1.0, alpha=1.0)
    devs = []
    for N in (1.0, 2.0, 4.0):
        res = E.symbol_integrability("pd_remainder", zones.make_layout("TwoZone", ZERO, g, 50.0, N=N), 1.0)
        devs.append(abs(res.value - 2.0 / N) if res.converges else math.inf)
    base = harness.load_scenario("t42_effective_decaying_g").zone_layout()
    long = zones.make_layout(base.family, base.b, base.g, 50.0, **base.constants)
    ell = [E.symbol_integrability("ell_remainder", long, 100.0, N) for N in (2.0, 5.0, 10.0, 20.0)]
    vals = [v.value for v in ell]
    ell_ok = all(v.converges and math.isfinite(v.value) for v in ell) and all(
        b <= a for a, b in zip(vals, vals[1:]))
    ok = max(devs) <= 1e-6 and ell_ok
    record(11, ok, f"pd remainder max |I - 2/N| {max(devs):.1e} (<= 1e-6); elliptic remainder "
                   f"{', '.join(f'{v:.3g}' for v in vals)} non-increasing")
    assert ok


def test_ac12_zone_bounds(runs):
    rows = []
    for name, ids in (("t21_scattering", ("bound:ell_scattering", "bound:pd_scattering")),
                      ("t32_noneffective_decaying_g", ("bound:hyp_noneffective", "bound:diss_noneffective"))):
        rep = runs(name)
        for cid in ids:
            rows.append((cid, rep.checks[cid]))
    ok = all(r["verdict"] == "pass" and isinstance(r["constant"], float) and math.isfinite(r["constant"])
             for _, r in rows)
    record(12, ok, "; ".join(f"{cid.split(':')[1]} C={r['constant']:.3g} "
                             f"({r['window_prev']:.3g}->{r['window_last']:.3g})" for cid, r in rows))
    assert ok
