import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dampwave.classify import (CONDITION_SETS, ConditionError, as_grid, check_conditions, classify_friction,
                               default_horizon)

from conftest import P


@pytest.mark.parametrize("b, kind", [
    (P("power", c=1, alpha=-2), "Scattering"),
    (P("power", c=0.5, alpha=-1), "NonEffective"),
    (P("exp", c=1, alpha=1), "OverDamping"),
    (P("power", c=1, alpha=0.5), "Effective"),
    (P("doubleexp", c=1, sign=1), "OverDamping"),
])
def test_friction_classes(b, kind):
    assert classify_friction(b).kind == kind


def test_noneffective_limsup_reported():
    c = classify_friction(P("power", c=0.5, alpha=-1))
    assert c.limsup_tb == pytest.approx(0.5, abs=1e-3)
    assert any(e["condition"].startswith("limsup") for e in c.to_dict()["evidence"])


def test_boundary_limsup_is_not_guessed():
    c = classify_friction(P("power", c=1, alpha=-1))
    assert c.kind == "Unclassified"
    assert any("boundary" in d for d in c.diagnostics)


def test_evidence_always_populated():
    for b in (P("power", c=1, alpha=-2), P("exp", c=1, alpha=1), P("power", c=1, alpha=-1)):
        assert classify_friction(b).evidence


def test_effective_E3_and_EF_examples():
    b, g = P("power", c=1, alpha=-0.5), P("exp", c=0.5, alpha=-1)
    e = check_conditions("E1E5", b, g)
    assert e.verdicts["E3"].status == "pass"
    assert e.fitted["max_bg"] == pytest.approx(0.5, rel=1e-12)
    ef = check_conditions("EF", b, None)
    assert ef.passed and ef.fitted["a"] == pytest.approx(0.5, rel=1e-12)


def test_A1_fails_for_decaying_g():
    r = check_conditions("A1A3", None, P("exp", c=0.5, alpha=-1))
    assert r.verdicts["A1"].status == "fail"


def test_missing_profile_is_an_error():
    with pytest.raises(ConditionError):
        check_conditions("EF", None, P("exp", c=1, alpha=1))
    with pytest.raises(ConditionError):
        check_conditions("NOPE", P("exp", c=1, alpha=1), None)


def test_double_exponential_default_horizon():
    assert default_horizon(P("doubleexp", c=1, sign=1)) == 6.0
    assert default_horizon(P("exp", c=1, alpha=1)) == 50.0


@given(st.floats(0.05, 3.0))
def test_fitted_EF_constant_is_idempotent(c):
    b = P("power", c=c, alpha=-0.5)
    rep = check_conditions("EF", b, None)
    a = rep.fitted["a"]
    t = as_grid(None, default_horizon(b))
    assert np.all(np.abs(b.d1(t)) <= a * b.value(t) ** 2 * (1 + 1e-12))
    assert a == pytest.approx(0.5 / c, rel=1e-12)


@given(st.floats(0.1, 10.0))
def test_scaling_keeps_integrability_verdict(lam):
    assert classify_friction(P("power", c=lam, alpha=-2)).kind == "Scattering"
    assert classify_friction(P("exp", c=lam, alpha=1)).kind == "OverDamping"


@given(st.floats(0.05, 2.0))
def test_scaling_changes_noneffective_only_through_threshold(lam):
    c = classify_friction(P("power", c=lam, alpha=-1))
    assert c.limsup_tb == pytest.approx(lam, rel=1e-3)
    if lam < 1 - 2e-3:
        assert c.kind == "NonEffective"
    elif lam > 1 + 2e-3:
        assert c.kind != "NonEffective"


def test_condition_set_ids():
    assert set(CONDITION_SETS) == {"A1A3", "A'1A'3", "NEF", "B'1B'3", "B1B3", "EF", "G1G4", "E1E5", "OD1OD2"}
