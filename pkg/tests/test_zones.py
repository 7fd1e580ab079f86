import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dampwave.zones import (ZoneError, make_layout, region_of, separating_time, zone_chain, zone_of)

from conftest import P

ZERO = P("constant", c=0)
G_UP = P("exp", c=1, alpha=1)
G_DOWN = P("exp", c=0.5, alpha=-1)


def two_zone(N=1.0, t_max=50.0):
    return make_layout("TwoZone", ZERO, G_UP, t_max, N=N)


def five_zone(**kw):
    consts = dict(eps3=0.2, eps2=0.9, eps1=1.1, N=2.0)
    consts.update(kw)
    return make_layout("FiveZoneOverdamping", P("exp", c=1, alpha=1), G_DOWN, 50.0, **consts)


def test_two_zone_separating_time_is_log3():
    assert abs(separating_time(two_zone(), "t_xi", 1.0) - math.log(3.0)) <= 1e-10


def test_two_zone_tiny_xi_has_no_crossing():
    assert separating_time(two_zone(), "t_xi", 1e-12) is None
    chain = zone_chain(two_zone(), 1e-12)
    assert [(iv.zone, iv.start, iv.end) for iv in chain] == [("Zpd", 0.0, 50.0)]


def test_two_zone_points():
    L = two_zone()
    assert zone_of(L, 0.0, 5.0) == "Zpd"
    assert zone_of(L, 2.0, 1.0) == "Zell"


def test_two_zone_chain():
    chain = zone_chain(two_zone(), 1.0)
    assert [iv.zone for iv in chain] == ["Zpd", "Zell"]
    assert chain[0].end == pytest.approx(math.log(3.0), abs=1e-10)


def test_four_zone_gap_at_origin():
    L = make_layout("FourZoneNonEffective", P("power", c=0.5, alpha=-1), G_DOWN, 50.0, N1=10, eps=0.1)
    assert zone_of(L, 0.0, 1.0) == "Gap"


def test_five_zone_curve_at_zero():
    assert separating_time(five_zone(), "t_xi4", 4.0) == pytest.approx(0.0, abs=1e-10)


def test_five_zone_chain_order():
    chain = zone_chain(five_zone(), 100.0)
    assert [iv.zone for iv in chain] == ["Zell", "Zred1", "Zhyp", "Zred2", "Zdiss"]
    # g(t) xi crosses N, eps1, eps2, eps3 in turn
    for iv, c in zip(chain[:-1], (2.0, 1.1, 0.9, 0.2)):
        assert G_DOWN.value(iv.end) * 100.0 == pytest.approx(c, rel=1e-9)


def test_five_zone_ordering_enforced():
    with pytest.raises(ZoneError):
        five_zone(eps2=1.2, eps1=1.1)
    with pytest.raises(ZoneError):
        five_zone(eps3=0.5)


def test_region_examples():
    b = P("exp", c=1, alpha=1)  # b g = 1/2
    assert region_of(b, G_DOWN, 0.0, 2.0 + math.sqrt(2.0)) == "Boundary"
    assert region_of(b, G_DOWN, 0.0, 1.0) == "PiHyp"
    assert region_of(ZERO, ZERO, 3.0, 2.0) == "PiHyp"
    assert region_of(b, G_DOWN, 0.0, 10.0) == "PiEll"


def _chain_ok(L, xi):
    chain = zone_chain(L, xi)
    assert chain[0].start == 0.0 and chain[-1].end == L.t_max
    for a, b in zip(chain, chain[1:]):
        assert a.end == b.start and a.zone != b.zone
    for iv in chain:
        assert iv.start < iv.end
        for t in np.linspace(iv.start, iv.end, 7)[1:-1]:
            assert zone_of(L, float(t), xi) == iv.zone
    return chain


@given(st.floats(-3.0, 3.0))
def test_two_zone_chain_partitions_horizon(logxi):
    _chain_ok(two_zone(N=10.0), 10.0 ** logxi)


@given(st.floats(-1.0, 3.0))
def test_five_zone_chain_partitions_horizon(logxi):
    _chain_ok(five_zone(N=10.0), 10.0 ** logxi)


@given(st.floats(-2.0, 2.0))
def test_four_zone_chain_partitions_horizon(logxi):
    L = make_layout("FourZoneNonEffective", P("power", c=0.5, alpha=-1), G_DOWN, 50.0)
    _chain_ok(L, 10.0 ** logxi)


@given(st.floats(-2.0, 2.0))
def test_effective_chain_partitions_horizon(logxi):
    L = make_layout("EffectiveDecaying", P("power", c=1, alpha=-0.5), G_DOWN, 50.0)
    _chain_ok(L, 10.0 ** logxi)


@given(st.floats(0.0, 6.0), st.floats(-2.0, 3.0))
def test_region_matches_separating_functions(t, logxi):
    b, g = P("power", c=1, alpha=-0.5), G_DOWN
    xi = 10.0 ** logxi
    bg = b.value(t) * g.value(t)
    assert bg < 1
    f1 = (1 + math.sqrt(1 - bg)) / g.value(t)
    f2 = (1 - math.sqrt(1 - bg)) / g.value(t)
    reg = region_of(b, g, t, xi)
    if reg != "Boundary":
        assert (reg == "PiHyp") == (f2 < xi < f1)


def test_f1_nondecreasing_under_E3_E4():
    b, g = P("power", c=1, alpha=-0.5), G_DOWN
    L = make_layout("EffectiveDecaying", b, g, 50.0)
    t = np.linspace(0.0, 50.0, 2001)
    f1 = L.f_plus(t)
    assert np.all(np.diff(f1) >= 0.0)
