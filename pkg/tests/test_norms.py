import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dampwave import modes, norms as N

from conftest import P

BAND_12 = N.DataProfile(kind="indicator", r_min=1.0, r_max=2.0)
INDICATOR_NORM = math.sqrt(4.0 * math.pi * 7.0 / 3.0)


def test_sphere_area():
    assert N.sphere_area(3) == pytest.approx(4.0 * math.pi)
    assert N.sphere_area(2) == pytest.approx(2.0 * math.pi)


def test_indicator_band_norm():
    r = BAND_12.grid()
    assert N.sobolev_norm(r, np.ones_like(r), N.NormRequest(0.0, 3)) == pytest.approx(INDICATOR_NORM, rel=1e-9)
    assert N.data_norm(BAND_12, "u0", 0.0) == pytest.approx(INDICATOR_NORM, rel=1e-9)
    assert INDICATOR_NORM == pytest.approx(5.4149, abs=1e-4)


def test_zero_field():
    r = BAND_12.grid()
    assert N.sobolev_norm(r, np.zeros_like(r), N.NormRequest(1.5)) == 0.0


def test_static_field_matches_data_norm():
    data = N.DataProfile(u1=0.0)
    r = data.grid()
    t = np.linspace(0.0, 5.0, 6)
    zero = P("constant", c=0.0)
    sols = modes.solve_modes(zero, zero, np.zeros_like(r), data.u0_hat(r), 0.0, t)
    # xi = 0 modes stay put, so evaluate the norm with the r-grid weights directly
    U = np.array([[s.u_hat[k] for s in sols] for k in range(t.size)])
    series = N.field_norm_series(r, U, 1.0, data.n)
    np.testing.assert_allclose(series, N.data_norm(data, "u0", 1.0), rtol=1e-12)


def test_inhomogeneous_dominates_homogeneous():
    for s in (0.0, 1.0, 2.0):
        assert N.data_norm(BAND_12, "u1", s, homogeneous=False) >= N.data_norm(BAND_12, "u1", s)


def test_negative_order_is_finite():
    data = N.DataProfile()
    val = N.data_norm(data, "u1", -2.0)
    assert math.isfinite(val) and val > 0


def test_cap_norm_is_max_of_seminorms():
    data = N.DataProfile()
    cap = N.data_norm(data, "u0", 1.0, kind="cap")
    assert cap == max(N.data_norm(data, "u0", 1.0), N.data_norm(data, "u0", 2.0))


def test_bad_inputs():
    with pytest.raises(N.NormError):
        N.DataProfile(r_min=2.0, r_max=1.0)
    with pytest.raises(N.NormError):
        N.DataProfile(kind="box")
    with pytest.raises(N.NormError):
        N.sobolev_norm(BAND_12.grid(), np.ones(3), N.NormRequest(0.0))
    with pytest.raises(N.NormError):
        N.log_quadrature(np.array([1.0, 2.0, 2.5, 3.0]), np.ones(4))
    with pytest.raises(N.NormError):
        N.data_norm(BAND_12, "u2", 0.0)
    with pytest.raises(N.NormError):
        N.NormRequest(0.0, which="v")


@pytest.mark.parametrize("count", [3, 4, 5, 8, 11])
def test_simpson_weights_exact_on_cubics(count):
    x = np.linspace(0.0, 2.0, count)
    w = N.simpson_weights(count, float(x[1] - x[0]))
    assert np.dot(w, x**3 - x + 1) == pytest.approx(4.0 - 2.0 + 2.0, rel=1e-13)


# -------------------------------------------------------------------- ratios

def test_ratio_of_equal_series():
    t = np.linspace(1.0, 100.0, 200)
    env = np.exp(-t / 50.0)
    st_ = N.ratio_series(t, env, env)
    assert st_.sup == pytest.approx(1.0) and st_.slope == pytest.approx(0.0, abs=1e-12)
    st2 = N.ratio_series(t, 2.0 * env, env)
    assert st2.sup == pytest.approx(2.0) and st2.slope == pytest.approx(0.0, abs=1e-12)


def test_ratio_power_law_slope():
    t = np.linspace(1.0, 100.0, 200)
    env = np.exp(-t / 50.0)
    assert N.ratio_series(t, env * (1.0 + t) ** 0.1, env).slope == pytest.approx(0.1, abs=5e-3)


def test_ratio_excludes_bad_envelope_points():
    t = np.linspace(1.0, 10.0, 10)
    env = np.ones_like(t)
    env[3], env[5], env[7] = 0.0, np.inf, -1.0
    st_ = N.ratio_series(t, np.ones_like(t), env)
    assert st_.excluded == 3 and np.isnan(st_.ratio[3])
    with pytest.raises(N.NormError):
        N.ratio_series(t, np.ones(3), env)


# ---------------------------------------------------------------- properties

@given(st.floats(-2.0, 3.0), st.sampled_from(["log_gaussian", "indicator"]), st.sampled_from(["hom", "inhom"]))
def test_refined_data_norm_is_grid_converged(s, kind, norm_kind):
    data = N.DataProfile(kind=kind)
    fine = data.grid()
    for _ in range(6):
        fine = N.refine_grid(fine)
    reference = N.data_norm(data, "u0", s, kind=norm_kind, r=fine)
    got = N.data_norm_refined(data, "u0", s, kind=norm_kind)
    assert abs(got - reference) <= 1e-6 * reference


@given(st.floats(-2.0, 3.0))
def test_smooth_profile_norm_stable_under_doubling(s):
    data = N.DataProfile()
    coarse = N.data_norm(data, "u0", s)
    assert abs(N.data_norm(data, "u0", s, r=N.refine_grid(data.grid())) - coarse) <= 1e-6 * coarse


def test_tiny_amplitude_field_series():
    data = N.DataProfile()
    r = data.grid()
    U = np.stack([data.u0_hat(r), 1e-200 * data.u0_hat(r), 0.0 * r])
    series = N.field_norm_series(r, U, 0.5, 3)
    assert series[1] == pytest.approx(1e-200 * series[0], rel=1e-12)
    assert series[2] == 0.0


def test_refine_grid_keeps_nodes():
    r = N.log_grid(0.1, 10.0, 9)
    fine = N.refine_grid(r)
    assert fine.size == 17
    np.testing.assert_array_equal(fine[0::2], r)
    assert np.allclose(np.diff(np.log(fine)), np.log(fine[1] / fine[0]))


@given(st.floats(-1.0, 2.0), st.floats(-5.0, 5.0))
def test_norm_is_homogeneous_in_amplitude(s, c):
    data = N.DataProfile()
    scaled = N.DataProfile(u0=c)
    assert N.data_norm(scaled, "u0", s) == pytest.approx(abs(c) * N.data_norm(data, "u0", s), rel=1e-12, abs=1e-300)


def test_plancherel_at_time_zero():
    data = N.DataProfile(nodes=41)
    r = data.grid()
    b, g = P("power", c=0.5, alpha=-1.0), P("exp", c=0.5, alpha=-1.0)
    sols = modes.solve_modes(b, g, r, data.u0_hat(r), data.u1_hat(r), np.linspace(0.0, 2.0, 5))
    got = N.sobolev_norm(r, sols, N.NormRequest(0.0, data.n, "u", 0.0))
    assert got == pytest.approx(N.data_norm(data, "u0", 0.0), rel=1e-12)


@pytest.mark.parametrize("b, g", [
    (P("power", c=0.5, alpha=-1.0), P("exp", c=0.5, alpha=-1.0)),
    (P("power", c=1.0, alpha=-2.0), P("exp", c=1.0, alpha=1.0)),
    (P("constant", c=0.0), P("constant", c=0.0)),
])
def test_energy_norm_non_increasing(b, g):
    data = N.DataProfile(nodes=41)
    r = data.grid()
    t = np.linspace(0.0, 10.0, 101)
    sols = modes.solve_modes(b, g, r, data.u0_hat(r), data.u1_hat(r), t, rel_tol=1e-10)
    U = np.stack([s.u_hat for s in sols], axis=1)
    V = np.stack([s.ut_hat for s in sols], axis=1)
    total = np.hypot(N.field_norm_series(r, U, 1.0, data.n), N.field_norm_series(r, V, 0.0, data.n))
    assert np.all(np.diff(total) <= 1e-8 * total[0])
