import numpy as np
import pytest

from wavetail.errors import InvalidProfileError
from wavetail.profiles import RadialProfile, symbol_order_check


def test_power_law_unit_ratio_at_origin():
    # sup <r>^1.5 * (1+r^2)^(-0.75) == 1, attained at r = 0
    a = RadialProfile.power_law(1.0, 1.5)
    rep = symbol_order_check(a, order=1.5, kmax=0)
    assert rep.passed
    assert rep.ratios[0] == pytest.approx(1.0, abs=1e-12)


def test_power_law_fails_overdeclared_order():
    # declaring order 2.5 for a (1+r^2)^(-0.75) profile grows like r
    a = RadialProfile.power_law(1.0, 1.5)
    rep = symbol_order_check(a, order=2.5, kmax=0)
    assert not rep.passed
    assert rep.growth[0] > 0.5


@pytest.mark.parametrize("mu", [0.5, 1.5, 2.5, 4.0])
def test_gaussian_passes_any_polynomial_order(mu):
    a = RadialProfile.gaussian(1.0, width=1.0, order=mu)
    rep = symbol_order_check(a, order=mu, kmax=4)
    assert rep.passed


def test_power_law_all_derivative_orders():
    a = RadialProfile.power_law(0.7, 2.5)
    rep = symbol_order_check(a, kmax=4)
    assert rep.passed
    assert set(rep.ratios) == {0, 1, 2, 3, 4}


def test_bump_compact_support_and_smooth():
    a = RadialProfile.bump(2.0, radius=3.0)
    r = np.linspace(0.0, 5.0, 101)
    v = a(r)
    assert np.all(np.isfinite(v))
    assert v[r >= 3.0].max() == 0.0
    assert a(0.0) == pytest.approx(2.0)
    rep = symbol_order_check(a, order=3.0, kmax=3)
    assert rep.passed


def test_derivatives_are_exact():
    a = RadialProfile.power_law(1.0, 2.0)
    r = np.geomspace(0.01, 50, 40)
    h = 1e-5
    fd = (a(r + h) - a(r - h)) / (2 * h)
    assert np.allclose(a(r, k=1), fd, rtol=1e-8, atol=1e-10)


def test_odd_power_law_vanishes_at_origin():
    a = RadialProfile.odd_power_law(1.0, 1.5)
    assert a(0.0) == 0.0
    assert symbol_order_check(a, order=1.5, kmax=3).passed


def test_profile_algebra_orders():
    a = RadialProfile.power_law(1.0, 1.5)
    b = RadialProfile.power_law(2.0, 2.5)
    assert (a + b).order == 1.5
    assert (a * b).order == 4.0
    assert (3.0 * a).order == 1.5
    assert symbol_order_check(a * b, kmax=2).passed


def test_invalid_profile_raises():
    import sympy as sp
    from wavetail.profiles import R_SYM
    bad = RadialProfile(1 / (R_SYM - 50), order=1.0)
    with pytest.raises(InvalidProfileError):
        symbol_order_check(bad, kmax=0,
                           grid=np.concatenate([[0.0],
                                                np.geomspace(1e-3, 2e3, 700),
                                                [50.0]]))


def test_serialization_roundtrip():
    a = RadialProfile.power_law(0.4, 2.5)
    b = RadialProfile.from_dict(a.to_dict())
    r = np.geomspace(1e-3, 1e3, 50)
    assert np.allclose(a(r), b(r))
    s = a + RadialProfile.gaussian(0.1, width=2.0, order=2.5)
    s2 = RadialProfile.from_dict(s.to_dict())
    assert np.allclose(s(r), s2(r))
