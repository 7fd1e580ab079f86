import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from dampwave import _kernels
from dampwave.modes import (NotConvergedError, SolverError, check_transforms, fundamental_matrix, mode_limit, solve_mode,
                            solve_modes)

from conftest import P

ZERO = P("constant", c=0)
TWO = P("constant", c=2)
# stiff Radau reference at rtol 1e-12, frozen
LIMIT_ORACLE = 0.46463087286899


def const_mode(p, xi, u0, u1, t):
    """Closed-form constant-coefficient mode u'' + p u' + xi^2 u = 0."""
    q = xi * xi
    disc = p * p - 4 * q
    if disc > 0:
        r1, r2 = (-p + math.sqrt(disc)) / 2, (-p - math.sqrt(disc)) / 2
        c1 = (u1 - r2 * u0) / (r1 - r2)
        c2 = u0 - c1
        return c1 * np.exp(r1 * t) + c2 * np.exp(r2 * t)
    if disc == 0:
        a = -p / 2
        return (u0 + (u1 - a * u0) * t) * np.exp(a * t)
    a, w = -p / 2, math.sqrt(-disc) / 2
    return np.exp(a * t) * (u0 * np.cos(w * t) + (u1 - a * u0) / w * np.sin(w * t))


def radau(b, g, xi, u0, u1, t, rtol=1e-12):
    def f(s, y):
        return [y[1], -xi * xi * y[0] - (b.value(s) + g.value(s) * xi * xi) * y[1]]

    def jac(s, y):
        return [[0.0, 1.0], [-xi * xi, -(b.value(s) + g.value(s) * xi * xi)]]
    r = solve_ivp(f, (t[0], t[-1]), [u0, u1], method="Radau", t_eval=t, rtol=rtol, atol=1e-16, jac=jac)
    assert r.success
    return r.y


def test_undamped_oscillator():
    s = solve_mode(ZERO, ZERO, 2.0, 1.0, 0.0, np.array([0.0, math.pi / 2]))
    assert s.u_hat[-1] == pytest.approx(-1.0, abs=1e-9)


def test_critical_damping_friction_and_viscoelastic_agree():
    t = np.linspace(0.0, 1.0, 11)
    a = solve_mode(TWO, ZERO, 1.0, 1.0, 0.0, t)
    b = solve_mode(ZERO, TWO, 1.0, 1.0, 0.0, t)
    assert a.u_hat[-1] == pytest.approx(2.0 / math.e, rel=1e-9)
    np.testing.assert_allclose(a.u_hat, b.u_hat, rtol=1e-12)


def test_energy_series():
    t = np.linspace(0.0, 5.0, 51)
    s = solve_mode(TWO, ZERO, 1.0, 1.0, 0.5, t)
    np.testing.assert_allclose(s.energy, 0.5 * (s.ut_hat**2 + s.u_hat**2))
    assert s.energy_monotone()


@pytest.mark.parametrize("bad", [0.0, 1e-13, 1e-2])
def test_rel_tol_range(bad):
    with pytest.raises(ValueError):
        solve_mode(ZERO, ZERO, 1.0, 1.0, 0.0, np.linspace(0, 1, 3), bad)


def test_bad_inputs():
    with pytest.raises(ValueError):
        solve_mode(ZERO, ZERO, -1.0, 1.0, 0.0, np.linspace(0, 1, 3))
    with pytest.raises(ValueError):
        solve_mode(ZERO, ZERO, 1.0, 1.0, 0.0, np.array([0.0, 1.0, 0.5]))


@pytest.mark.parametrize("p, xi", [(0.0, 3.0), (2.0, 1.0), (3.0, 1.0), (1.0, 1.0), (0.3, 5.0)])
def test_closed_forms(p, xi):
    t = np.linspace(0.0, 10.0, 201)
    s = solve_mode(P("constant", c=p), ZERO, xi, 1.0, -0.5, t)
    ref = const_mode(p, xi, 1.0, -0.5, t)
    assert np.max(np.abs(s.u_hat - ref)) <= 1e-8 * np.max(np.abs(ref))


def test_halving_tolerance_halves_error():
    t = np.linspace(0.0, 10.0, 11)
    for p, gc, xi in ((0.0, 0.0, 2.0), (2.0, 0.0, 1.0), (3.0, 0.0, 1.0), (1.0, 0.0, 1.0), (0.0, 0.5, 10.0)):
        b, g = P("constant", c=p), P("constant", c=gc)
        ref = const_mode(p + gc * xi * xi, xi, 1.0, 0.0, t)
        for tol in (1e-6, 1e-8, 1e-10):
            e1 = np.max(np.abs(solve_mode(b, g, xi, 1.0, 0.0, t, tol).u_hat - ref))
            e2 = np.max(np.abs(solve_mode(b, g, xi, 1.0, 0.0, t, tol / 2).u_hat - ref))
            assert e1 >= 2.0 * e2, (p, gc, xi, tol, e1, e2)


@pytest.mark.parametrize("b, g, xi", [
    (P("power", c=1, alpha=-2), P("exp", c=1, alpha=1), 1.0),
    (P("power", c=0.5, alpha=-1), P("exp", c=0.5, alpha=-1), 3.0),
    (P("exp", c=1, alpha=1), P("exp", c=0.5, alpha=-1), 1.0),
    (P("power", c=1, alpha=0.5), ZERO, 0.2),
])
def test_variable_coefficients_match_radau(b, g, xi):
    t = np.linspace(0.0, 6.0, 61)
    s = solve_mode(b, g, xi, 1.0, 0.3, t, 1e-10)
    ref = radau(b, g, xi, 1.0, 0.3, t)
    w = max(xi, 1.0)
    err = np.sqrt((w * (s.u_hat - ref[0])) ** 2 + (s.ut_hat - ref[1]) ** 2)
    scale = np.max(np.sqrt((w * ref[0]) ** 2 + ref[1] ** 2))
    assert np.max(err) <= 1e-7 * scale


def test_fundamental_matrix_examples():
    fm = fundamental_matrix(TWO, ZERO, 1.0, 0.0, np.linspace(0.0, 1.0, 11))
    np.testing.assert_array_equal(fm.entries[0], np.eye(2))
    assert fm.det[-1] == pytest.approx(math.exp(-2.0), rel=1e-9)
    t = np.linspace(0.0, 3.0, 31)
    rot = fundamental_matrix(ZERO, ZERO, 1.0, 0.0, t)
    ref = np.stack([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]]).transpose(2, 0, 1)
    np.testing.assert_allclose(rot.entries, ref, atol=1e-9)


def test_fundamental_matrix_rejects_hopeless_windows():
    with pytest.raises(SolverError, match="determinant tracking"):
        fundamental_matrix(P("doubleexp", c=1, sign=1), ZERO, 1.0, 0.0, np.linspace(0.0, 5.0, 5))


def test_fundamental_matrix_base_time():
    with pytest.raises(ValueError):
        fundamental_matrix(TWO, ZERO, 1.0, 0.5, np.linspace(0.0, 1.0, 11))


def test_liouville_stiff_draw():
    fm = fundamental_matrix(P("exp", c=1, alpha=1), ZERO, 1.0, 0.0, np.linspace(0.0, 5.0, 11))
    assert fm.liouville_error() <= 1e-6


@st.composite
def coefficient(draw):
    fam = draw(st.sampled_from(["constant", "power", "exp"]))
    c = draw(st.floats(0.1, 2.0))
    if fam == "constant":
        return P(fam, c=c)
    if fam == "power":
        return P(fam, c=c, alpha=draw(st.floats(-2.0, 1.0)))
    return P(fam, c=c, alpha=draw(st.floats(-1.0, 1.0)))


@given(coefficient(), coefficient(), st.floats(0.1, 5.0), st.floats(0.0, 2.0))
def test_liouville_identity(b, g, xi, s):
    fm = fundamental_matrix(b, g, xi, s, np.linspace(s, s + 4.0, 17))
    assert fm.liouville_error() <= 1e-6


@given(coefficient(), coefficient(), st.floats(0.1, 5.0), st.floats(-3.0, 3.0), st.floats(-2.0, 2.0),
       st.floats(-2.0, 2.0))
def test_linearity(b, g, xi, alpha, u0, u1):
    t = np.linspace(0.0, 4.0, 21)
    s1 = solve_mode(b, g, xi, u0, u1, t, 1e-10)
    s2 = solve_mode(b, g, xi, alpha * u0, alpha * u1, t, 1e-10)
    scale = max(1e-300, abs(alpha) * float(np.max(np.abs(s1.u_hat))))
    assert np.max(np.abs(s2.u_hat - alpha * s1.u_hat)) <= 1e-9 * scale


@given(coefficient(), coefficient(), st.floats(0.1, 5.0))
def test_energy_non_increasing(b, g, xi):
    s = solve_mode(b, g, xi, 1.0, 1.0, np.linspace(0.0, 5.0, 51), 1e-8)
    assert s.energy_monotone()
    assert s.energy_residual <= 10 * 1e-8


def test_transform_identity_when_undamped():
    tc = check_transforms(ZERO, ZERO, 1.0, 1.0, 1.0, 5.0)
    assert tc.v_deviation == 0.0 and tc.w_deviation == 0.0


def test_transform_critical_damping():
    tc = check_transforms(TWO, ZERO, 1.0, 1.0, 0.0, 5.0)
    assert tc.max_deviation <= 1e-8
    assert tc.horizon == 5.0


def test_transform_growing_g():
    tc = check_transforms(ZERO, P("exp", c=1, alpha=1), 0.1, 1.0, 1.0, 5.0)
    assert tc.max_deviation <= 1e-6


def test_mode_limit_overdamping_oracle():
    s = solve_mode(P("exp", c=1, alpha=1), P("exp", c=0.5, alpha=-1), 1.0, 1.0, 0.0, np.linspace(0.0, 40.0, 401))
    lim = mode_limit(s)
    assert lim.converged and abs(lim.value) > 0.1
    assert lim.value == pytest.approx(LIMIT_ORACLE, abs=1e-8)


def test_mode_limit_undamped_not_converged():
    s = solve_mode(ZERO, ZERO, 1.0, 1.0, 0.0, np.linspace(0.0, 40.0, 401))
    assert not mode_limit(s).converged
    with pytest.raises(NotConvergedError):
        mode_limit(s, strict=True)


def test_mode_limit_decaying_is_zero():
    s = solve_mode(TWO, ZERO, 1.0, 1.0, 0.0, np.linspace(0.0, 60.0, 601))
    lim = mode_limit(s)
    assert lim.converged and lim.value == 0.0


def test_doubleexp_friction_has_no_floor_aborts():
    sols = solve_modes(P("doubleexp", c=1, sign=1), P("exp", c=2, alpha=-1), np.geomspace(0.1, 10, 9), 1.0, 1.0,
                       np.linspace(0.0, 3.0, 31), 1e-8)
    assert all(np.all(np.isfinite(s.u_hat)) for s in sols)


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not importable")
def test_backends_agree():
    b, g = P("power", c=0.5, alpha=-1), P("exp", c=0.5, alpha=-1)
    xis = np.geomspace(0.1, 10.0, 12)
    t = np.linspace(0.0, 20.0, 41)
    a = solve_modes(b, g, xis, 1.0, 1.0, t, 1e-8, backend="numba")
    c = solve_modes(b, g, xis, 1.0, 1.0, t, 1e-8, backend="numpy")
    for x, y in zip(a, c):
        np.testing.assert_allclose(x.u_hat, y.u_hat, rtol=0, atol=1e-12 * np.max(np.abs(y.u_hat)))
        assert x.steps == y.steps
        assert x.energy_residual == pytest.approx(y.energy_residual, rel=1e-6, abs=1e-15)


def test_batch_independent_of_grouping():
    b, g = P("exp", c=1, alpha=1), P("exp", c=0.5, alpha=-1)
    xis = np.array([0.3, 1.0, 7.0])
    t = np.linspace(0.0, 5.0, 21)
    together = solve_modes(b, g, xis, 1.0, 0.0, t, 1e-8)
    for x, s in zip(xis, together):
        np.testing.assert_array_equal(solve_mode(b, g, x, 1.0, 0.0, t, 1e-8).u_hat, s.u_hat)
