import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dampwave import envelopes as E, harness, modes, zones
from dampwave.coeffcalc import make_profile

from conftest import P

DECAY_B = P("power", c=0.5, alpha=-1.0)
HALF_EXP_DOWN = P("exp", c=0.5, alpha=-1.0)
SQRT_B = P("power", c=1.0, alpha=-0.5)
EXP_UP = P("exp", c=1.0, alpha=1.0)
ZERO = P("constant", c=0.0)


def factors(env):
    return [(term.factor, term.norms) for term in env.terms]


# ------------------------------------------------------------ theorem envelopes

def test_exp_half_integral_factor():
    env_u, _ = E.theorem_envelope(E.EnvelopeSpec("T3.2", DECAY_B, HALF_EXP_DOWN, 2, a=0.5), np.array([15.0]))
    (fac, _), = factors(env_u)
    assert fac[0] == pytest.approx(0.5, rel=1e-12)


def test_effective_primitive_factor():
    env_u, _ = E.theorem_envelope(E.EnvelopeSpec("T4.2", SQRT_B, HALF_EXP_DOWN, 2, t0=0.0), np.array([3.0]))
    fac, norms = factors(env_u)[0]
    assert fac[0] == pytest.approx(3.0 / 17.0, rel=1e-12)
    assert norms[0].which == "u0"


def test_scattering_envelope_constant_and_g():
    t = np.array([0.0, 1.0, 2.0, 5.0])
    env_u, env_ut = E.theorem_envelope(E.EnvelopeSpec("T2.1", P("power", c=1.0, alpha=-2.0), EXP_UP, 2), t)
    (fu, nu), = factors(env_u)
    (fut, _), = factors(env_ut)
    np.testing.assert_allclose(fu, 1.0)
    np.testing.assert_allclose(fut, np.exp(t), rtol=1e-14)
    assert {(n.which, n.order) for n in nu} == {("u0", 2), ("u1", 0)}


def test_default_kappa():
    assert E.default_kappa(0.5, 10.0) == pytest.approx(0.25 / math.sqrt(0.96) - 0.25, rel=1e-14)
    assert E.default_kappa(0.5, 10.0) == pytest.approx(0.00516, abs=5e-6)


@given(st.floats(0.0, 200.0))
def test_exp_half_integral_matches_power_law(t):
    env_u, _ = E.theorem_envelope(E.EnvelopeSpec("T3.2", DECAY_B, HALF_EXP_DOWN, 2, a=0.5), np.array([t]))
    assert factors(env_u)[0][0][0] == pytest.approx((1.0 + t) ** -0.25, rel=1e-10)


# ------------------------------------------------------------------ mode bounds

def test_pd_bound_is_g_ratio():
    layout = zones.make_layout("TwoZone", ZERO, EXP_UP, 50.0, N=1.0)
    assert float(np.exp(E.mode_bound("pd_scattering", ZERO, EXP_UP, 1e-3, 0.0, 1.0, layout=layout))) == \
        pytest.approx(math.e, rel=1e-12)


def test_dissipative_bound_without_damping():
    assert float(np.exp(E.mode_bound("diss_noneffective", ZERO, ZERO, 1.0, 0.0, 2.0))) == 1.0


def test_ell_bound_at_equal_times():
    layout = zones.make_layout("TwoZone", ZERO, EXP_UP, 50.0, N=1.0)
    ln3 = math.log(3.0)
    assert float(E.mode_bound("ell_scattering", ZERO, EXP_UP, 1.0, ln3, ln3, layout=layout)) == pytest.approx(0.0,
                                                                                                           abs=1e-14)


def test_mode_bound_zone_mismatch():
    layout = zones.make_layout("FourZoneNonEffective", ZERO, ZERO, 50.0)
    with pytest.raises(E.EnvelopeError, match="outside"):
        E.mode_bound("diss_noneffective", ZERO, ZERO, 1.0, 0.0, 2.0, layout=layout)
    with pytest.raises(E.EnvelopeError):
        E.mode_bound("no_such_bound", ZERO, ZERO, 1.0, 0.0, 1.0)
    with pytest.raises(E.EnvelopeError):
        E.mode_bound("pd_scattering", ZERO, EXP_UP, 1.0, 2.0, 1.0)


@given(st.sampled_from(sorted(E.BOUNDS)), st.floats(0.01, 50.0), st.floats(0.0, 5.0))
def test_bounds_vanish_at_equal_times(bound_id, xi, s):
    b, g = P("power", c=0.5, alpha=-1.0), P("exp", c=1.0, alpha=1.0)
    assert float(E.mode_bound(bound_id, b, g, xi, s, s)) == pytest.approx(0.0, abs=1e-12)


def test_window_verdict():
    assert E.window_verdict([1, 2, 3, 4], [0, 0, 0, 0]) == (1.0, 1.0, 1.0, "pass")
    C, prev, last, verdict = E.window_verdict([1, 2, 3, 4], [0, 0, 0, 1])
    assert verdict == "fail" and last == pytest.approx(math.e)
    assert E.window_verdict([1, 2], [0, np.nan])[3] == "fail"


def test_bound_check_stable_on_scattering_scenario():
    sc = harness.load_scenario("t21_scattering")
    bc = E.bound_check("pd_scattering", sc.zone_layout(), sc.grids["bound_xis"], sc.horizon, points=129)
    assert bc.passed
    assert math.isfinite(bc.constant)
    assert bc.window_last <= E.STABILITY_FACTOR * bc.window_prev


# ---------------------------------------------------------------------- gluing

def test_glue_single_zone_equals_zone_estimate():
    sc = harness.load_scenario("t21_scattering")
    layout, spec = sc.zone_layout(), sc.envelope_spec()
    xi, t = 1e-3, np.linspace(0.0, 10.0, 21)
    assert [iv.zone for iv in zones.zone_chain(layout, xi)] == ["Zpd"]
    glued = E.glue_mode_envelope(spec, layout, xi, t)
    table, _, _ = E._transfers(spec, layout, xi, {})
    np.testing.assert_array_equal(glued.log_coeff, table["Zpd"](0.0, t))


@pytest.mark.parametrize("xi", [0.2, 1.0, 3.0])
def test_glue_hyperbolic_tail_rate(xi):
    sc = harness.load_scenario("t32_noneffective_decaying_g")
    layout, spec = sc.zone_layout(), sc.envelope_spec()
    t = np.linspace(0.0, 100.0, 401)
    glued = E.glue_mode_envelope(spec, layout, xi, t)
    hyp = [iv for iv in zones.zone_chain(layout, xi) if iv.zone == "Zhyp"][-1]
    sel = (t > hyp.start) & (t <= hyp.end)
    ts = t[sel]
    rate = -(2.0 - layout.c("eps")) / 4.0 * modes.damping_integral(layout.b, layout.g, xi, ts[0], ts)
    drift = glued.log_coeff[sel] - glued.log_coeff[sel][0]
    np.testing.assert_allclose(drift, np.broadcast_to(rate[:, None, None], drift.shape), atol=1e-12)


def test_glue_rejects_bad_input():
    sc = harness.load_scenario("t21_scattering")
    with pytest.raises(E.EnvelopeError):
        E.glue_mode_envelope(sc.envelope_spec(), sc.zone_layout(), 0.0, [0.0, 1.0])
    with pytest.raises(E.EnvelopeError):
        E.glue_mode_envelope(sc.envelope_spec(), sc.zone_layout(), 1.0, [0.0, 1e3])


# ------------------------------------------------------- pointwise inequalities

def test_f_kappa_constant():
    assert E.f_kappa(0.1) == pytest.approx(0.3797, abs=1e-4)
    assert E.f_kappa(0.1) == pytest.approx(1 / 12.96 + 1.21 / 4, rel=1e-14)


@pytest.mark.parametrize("name", ["t32_noneffective_decaying_g", "t42_effective_decaying_g",
                                  "t53_overdamping_decaying_g"])
def test_inequality_suite_has_no_violations(name):
    layout = harness.load_scenario(name).zone_layout()
    res = E.pointwise_inequality_suite(layout)
    assert {r.ineq_id for r in res} >= set(E.INEQUALITIES[layout.family])
    for r in res:
        assert r.max_violation == 0.0, r
        if r.ineq_id != "p_constant":
            assert r.points >= 10_000


def test_inequality_suite_empty_grid():
    layout = harness.load_scenario("t21_scattering").zone_layout()
    assert E.pointwise_inequality_suite(layout) == []


def test_d_equivalence_at_entry_of_elliptic_zone():
    # g = e^t, xi = 1 at G xi^2 = N2 = 10: (1/4 - 1/N^2) g^2 xi^4 <= d^2
    layout = zones.make_layout("FourZoneNonEffective", ZERO, EXP_UP, 50.0)
    t = math.log(11.0)
    grid = {"Zell": (np.array([t + 1e-9]), np.array([1.0]))}
    res = {r.ineq_id: r for r in E.pointwise_inequality_suite(layout, grid=grid)}
    assert res["d_lower"].points == 1 and res["d_lower"].max_violation == 0.0


# -------------------------------------------------------- symbol integrability

@pytest.mark.parametrize("N", [1.0, 2.0, 4.0])
def test_pd_remainder_closed_form(N):
    layout = zones.make_layout("TwoZone", ZERO, EXP_UP, 50.0, N=N)
    res = E.symbol_integrability("pd_remainder", layout, 1.0)
    assert res.converges
    assert res.value == pytest.approx(2.0 / N, abs=1e-6)


def test_ell_remainder_vanishes_for_constant_coefficients():
    c = P("constant", c=0.5)
    res = E.symbol_integrability("ell_remainder", zones.make_layout("EffectiveDecaying", c, c, 50.0), 100.0, 2.0)
    assert res.value == 0.0 and res.converges


def test_ell_remainder_finite_and_non_increasing():
    layout = harness.load_scenario("t42_effective_decaying_g").zone_layout()
    long = zones.make_layout(layout.family, layout.b, layout.g, 50.0, **layout.constants)
    vals = [E.symbol_integrability("ell_remainder", long, 100.0, N) for N in (2.0, 5.0, 10.0, 20.0)]
    assert all(v.converges and math.isfinite(v.value) for v in vals)
    values = [v.value for v in vals]
    assert all(b <= a for a, b in zip(values, values[1:]))


# ------------------------------------------------------------------ multipliers

def test_multiplier_lambda1_xi2_over_b():
    layout = harness.load_scenario("t42_effective_decaying_g").zone_layout()
    fit = E.multiplier_check("xi2_over_b", layout, eps=0.1)
    assert abs(fit.lambdas[0] - 0.2475) <= 1e-12
    assert fit.verdict == "pass" and all(math.isfinite(x) for x in fit.lambdas)


def test_multiplier_lambda1_b():
    layout = harness.load_scenario("t42_effective_decaying_g").zone_layout()
    fit = E.multiplier_check("b", layout)
    assert fit.lambdas[0] == pytest.approx(1.0, abs=1e-12)
    assert fit.verdict == "pass"


def test_multiplier_constant_b_has_no_derivative_term():
    layout = zones.make_layout("EffectiveDecaying", P("constant", c=0.5), HALF_EXP_DOWN, 50.0)
    for K_id in E.MULTIPLIERS:
        assert E.multiplier_check(K_id, layout).lambdas[2] == 0.0


def test_multiplier_decay_on_dissipative_mode():
    layout = harness.load_scenario("t42_effective_decaying_g").zone_layout()
    sol = modes.solve_mode(layout.b, layout.g, 0.02, 1.0, 0.0, np.linspace(0.0, 100.0, 1601))
    dc = E.multiplier_decay_check(sol, "xi2_over_b", layout)
    assert dc.applicable and dc.verdict == "pass"
    assert math.isfinite(dc.constant) and dc.constant > 0


def test_multiplier_decay_not_applicable_without_damping():
    layout = zones.make_layout("EffectiveDecaying", ZERO, ZERO, 50.0)
    sol = modes.solve_mode(ZERO, ZERO, 0.05, 1.0, 0.0, np.linspace(0.0, 50.0, 201))
    for K_id in E.MULTIPLIERS:
        dc = E.multiplier_decay_check(sol, K_id, layout)
        assert not dc.applicable and dc.verdict == "not-applicable"


def test_multiplier_rejects_other_layouts():
    with pytest.raises(E.EnvelopeError):
        E.multiplier_check("b", zones.make_layout("TwoZone", ZERO, EXP_UP, 10.0))
    with pytest.raises(E.EnvelopeError):
        E.multiplier_check("nope", harness.load_scenario("t42_effective_decaying_g").zone_layout())


# ------------------------------------------------------------- delta asymptotics

def test_delta_asymptotics_noneffective():
    res = E.delta_asymptotics(DECAY_B, HALF_EXP_DOWN, 1.0, np.linspace(0.0, 100.0, 401))
    assert res.monotone_tail and res.stable
    assert math.isfinite(res.constant)
