import numpy as np
import pytest

from wavetail.errors import (
    DivergentIntegralError,
    ExpansionExhaustedError,
    UnsupportedHalfPlaneError,
)
from wavetail.grids import GridFunction, radial_grid
from wavetail.operators import ReducedOperator, SphericalMetric, build_operator
from wavetail.resolvent import (
    apply_R,
    apply_twisted,
    free_resolvent,
    low_freq_fit,
    neumann_expand,
    resolve_mode,
    solve_mode_dense,
    spherical_h1,
    spherical_j,
    twist,
    untwist,
)

FLAT = ReducedOperator.flat(kappa=1.5)


def box_data(r):
    """Indicator of r <= 1 (the classic static test datum)."""
    r = np.asarray(r, dtype=float)
    return np.where(r <= 1.0, 1.0 + 0j, 0.0)


def gauss_data(r, w=0.5, r0=0.0):
    r = np.asarray(r, dtype=float)
    return np.exp(-((r - r0) / w) ** 2) * (1.0 + 0j)


class TestSphericalFunctions:
    def test_h1_matches_scipy_on_real_axis(self):
        from scipy.special import spherical_jn, spherical_yn
        z = np.linspace(0.5, 30, 57)
        for ell in range(5):
            ref = spherical_jn(ell, z) + 1j * spherical_yn(ell, z)
            assert np.allclose(spherical_h1(ell, z), ref, rtol=1e-12)

    def test_h1_upper_half_plane_decay(self):
        # h1(i|z|) ~ e^(-|z|): no cancellation blowup
        v = spherical_h1(0, 30j)
        assert abs(v) == pytest.approx(np.exp(-30) / 30, rel=1e-12)


class TestFreeResolvent:
    def test_static_box_closed_form(self):
        # v(r) = 1/(3r) for r >= 1, v = 1/2 - r^2/6 inside, v(0) = 1/2
        r = np.array([1e-3, 0.3, 0.9, 1.0, 2.0, 10.0])
        v = free_resolvent(0.0, 0, box_data, r, support=1.0, breaks=(1.0,))
        expect = np.where(r >= 1.0, 1.0 / (3 * r), 0.5 - r**2 / 6)
        assert np.allclose(v.values, expect, rtol=1e-9)

    def test_yukawa_sigma_i(self):
        # sigma = i: (-Lap + 1) positive, kernel e^(-|x-y|)/4pi|x-y|
        r = np.array([0.5, 1.5, 4.0, 8.0])
        v = free_resolvent(1j, 0, box_data, r, support=1.0, breaks=(1.0,))
        assert np.allclose(v.values.imag, 0.0, atol=1e-10)
        assert np.all(v.values.real > 0)
        # exponential tail: log-slope of r*v approaches -1
        big = np.array([6.0, 7.0, 8.0, 9.0])
        vb = free_resolvent(1j, 0, box_data, big, support=1.0).values.real
        slope = np.polyfit(big, np.log(vb * big), 1)[0]
        assert slope == pytest.approx(-1.0, abs=1e-3)

    def test_outgoing_radiation_constant(self):
        # |v| * r -> |int_0^1 j0(s) s^2 ds| = sin(1) - cos(1) at sigma = 1
        const = np.sin(1.0) - np.cos(1.0)
        r = np.array([20.0, 50.0, 120.0])
        v = free_resolvent(1.0, 0, box_data, r, support=1.0, breaks=(1.0,))
        assert np.allclose(np.abs(v.values) * r, const, rtol=1e-9)

    def test_static_divergent_data_raises(self):
        r = np.geomspace(0.1, 100, 120)
        slow = GridFunction(r, (1 + r) ** -1.5)
        with pytest.raises(DivergentIntegralError):
            free_resolvent(0.0, 0, slow, np.array([1.0]))


class TestResolveModeFlat:
    @pytest.mark.parametrize("ell", [0, 1, 2, 3, 4])
    @pytest.mark.parametrize("sigma", [0.0, 0.3, 1.0, 3.0])
    def test_matches_free_resolvent(self, ell, sigma):
        r_eval = np.geomspace(0.05, 40.0, 25)
        oracle = free_resolvent(sigma, ell, gauss_data, r_eval, support=6.0)
        dense = solve_mode_dense(FLAT, sigma, ell, gauss_data, g_support=6.0)
        mine = dense.value(r_eval)
        w = np.sqrt(1 + r_eval**2)
        err = np.max(w * np.abs(mine - oracle.values)) / \
            np.max(w * np.abs(oracle.values))
        assert err < 1e-6

    def test_limiting_absorption_continuity(self):
        # v(sigma + i eps) converges to the real-axis value as eps -> 0
        r_eval = np.geomspace(0.1, 40, 30)
        base = solve_mode_dense(FLAT, 0.7, 0, gauss_data,
                                g_support=6.0).value(r_eval)
        errs = []
        for eps in (0.2, 0.1, 0.05, 0.025):
            d = solve_mode_dense(FLAT, 0.7 + 1j * eps, 0, gauss_data,
                                 g_support=6.0)
            errs.append(np.max(np.abs(d.value(r_eval) - base)))
        assert all(e2 < 0.7 * e1 for e1, e2 in zip(errs, errs[1:]))
        assert errs[-1] < 0.05 * np.max(np.abs(base))

    def test_reality_symmetry(self):
        # P_(-sigma)^-1 g = conj(P_sigma^-1 conj g) for real g
        r_eval = np.geomspace(0.1, 30, 20)
        vp = solve_mode_dense(FLAT, 0.8, 1, gauss_data, g_support=6.0)
        vm = solve_mode_dense(FLAT, -0.8, 1, gauss_data, g_support=6.0)
        assert np.allclose(vm.value(r_eval), np.conj(vp.value(r_eval)),
                           rtol=1e-8, atol=1e-12)

    def test_elliptic_regime_decay(self):
        d = solve_mode_dense(FLAT, 0.5j, 0, gauss_data, g_support=6.0)
        r = np.array([10.0, 20.0, 30.0])
        v = np.abs(d.value(r))
        assert v[1] < v[0] * np.exp(-0.5 * 9) and v[2] < v[1]


class TestResolveModePerturbed:
    @pytest.fixture(scope="class")
    def op25(self):
        return build_operator(
            SphericalMetric.diagonal(2.5, amp00=0.4, amp_v=0.1),
            check_orders=False)

    def test_static_coulomb_tail(self, op25):
        # v = c/r + O(r^(-2+)) with c != 0
        d = solve_mode_dense(op25, 0.0, 0, gauss_data, g_support=6.0)
        r = np.geomspace(50, 5000, 40)
        rv = d.value(r) * r
        c = rv[-1]
        assert abs(c) > 1e-3
        # residual decays at least one power faster
        resid = np.abs(rv - c)
        assert resid[0] / abs(c) < 0.1
        slope = np.polyfit(np.log(r[:20]), np.log(resid[:20] + 1e-300), 1)[0]
        assert slope < -0.8

    def test_consistency_with_flat_limit(self):
        tiny = build_operator(
            SphericalMetric.diagonal(2.5, amp00=1e-8), check_orders=False)
        r_eval = np.geomspace(0.1, 30, 20)
        a = solve_mode_dense(tiny, 1.0, 0, gauss_data, g_support=6.0)
        b = solve_mode_dense(FLAT, 1.0, 0, gauss_data, g_support=6.0)
        assert np.allclose(a.value(r_eval), b.value(r_eval), rtol=1e-6)


class TestTwistAndR:
    def test_twist_identity_at_zero(self):
        g = GridFunction(np.geomspace(0.1, 10, 50),
                         np.exp(1j * np.geomspace(0.1, 10, 50)))
        assert np.allclose(twist(g, 0.0).values, g.values)

    def test_twist_untwist_roundtrip(self):
        r = np.geomspace(0.1, 10, 50)
        g = GridFunction(r, np.exp(1j * r) / r, deriv=np.ones_like(r) + 0j)
        back = untwist(twist(g, 0.7), 0.7)
        assert np.allclose(back.values, g.values, rtol=1e-14)
        assert np.allclose(back.deriv, g.deriv, rtol=1e-12, atol=1e-14)

    def test_twist_kills_outgoing_phase(self):
        r = np.geomspace(1, 50, 60)
        sigma = 1.3
        g = GridFunction(r, np.exp(1j * sigma * r) / r)
        tw = twist(g, sigma)
        assert np.allclose(tw.values, 1.0 / r, rtol=1e-13)

    def test_R_flat_on_inverse_powers(self):
        # R(1/r) = 0 exactly; R(1/r^2) = -2i/r^3
        r = np.geomspace(0.5, 50, 60)
        v1 = GridFunction(r, 1.0 / r, deriv=-1.0 / r**2 + 0j)
        rv1 = apply_R(v1, 0.0, FLAT)
        assert np.allclose(rv1.values, 0.0, atol=1e-14)
        v2 = GridFunction(r, 1.0 / r**2, deriv=-2.0 / r**3 + 0j)
        rv2 = apply_R(v2, 0.0, FLAT)
        assert np.allclose(rv2.values, -2j / r**3, rtol=1e-13)

    def test_defining_identity_P0_minus_sigmaR(self):
        # Ptw(0)v - sigma R v = Ptw(sigma)v on a smooth test function
        op = build_operator(SphericalMetric.diagonal(2.5, amp00=0.3,
                                                     amp_v=0.05),
                            check_orders=False)
        r = np.geomspace(0.2, 80, 200)
        u = np.exp(-((r - 3) / 1.5) ** 2) + 0j
        du = -2 * (r - 3) / 1.5**2 * u
        d2u = (-2 / 1.5**2 + (2 * (r - 3) / 1.5**2) ** 2) * u
        sigma = 0.3
        lhs = apply_twisted(op, 0.0, 1, r, u, du, d2u) \
            - sigma * apply_R(GridFunction(r, u, deriv=du), sigma,
                              op).values
        rhs = apply_twisted(op, sigma, 1, r, u, du, d2u)
        scale = np.max(np.abs(rhs))
        assert np.max(np.abs(lhs - rhs)) < 1e-8 * scale


class TestNeumann:
    @pytest.fixture(scope="class")
    def op25(self):
        return build_operator(
            SphericalMetric.diagonal(2.5, amp00=0.4, amp_v=0.1),
            check_orders=False)

    def test_N0_identity_flat(self):
        exp = neumann_expand(FLAT, 0.1, gauss_data, N=0, ell=0,
                             f_support=6.0)
        assert exp.residual < 1e-8

    def test_flat_first_iterate_no_rho2_term(self):
        # u0 ~ c/r outside support and flat R kills 1/r, so f1 decays
        # faster than r^-2 at large r (slope below -2.5 or noise floor)
        from wavetail.grids import estimate_tail_exponent
        from wavetail.resolvent import _apply_R_dense
        dense = solve_mode_dense(FLAT, 0.0, 0, gauss_data, g_support=6.0)
        v0, _ = _apply_R_dense(FLAT, (dense.value, dense.deriv))
        r = np.geomspace(20, 2000, 50)
        slope = estimate_tail_exponent(r, v0(r))
        assert slope < -2.5

    def test_expansion_bound_enforced(self, op25):
        with pytest.raises(ExpansionExhaustedError):
            neumann_expand(op25, 0.1, gauss_data, N=4, ell=0, f_support=6.0)


class TestConjugationIdentity:
    def test_untwist_twistedsolve_twist(self):
        # P_sigma^-1 f = e^(i sigma r) Ptw^-1 e^(-i sigma r) f at machine
        # precision (same solve, conjugated bookkeeping)
        sigma, ell = 0.9, 0
        grid = radial_grid(rmax=150)
        direct = resolve_mode(FLAT, sigma, ell, gauss_data, grid=grid,
                              g_support=6.0)

        def twisted_rhs(r):
            return np.exp(-1j * sigma * np.asarray(r)) * gauss_data(r)

        tw_dense = solve_mode_dense(
            FLAT, sigma, ell,
            lambda r: np.exp(1j * sigma * np.asarray(r)) * twisted_rhs(r),
            g_support=6.0)
        tw = twist(tw_dense.to_grid(grid), sigma)
        back = untwist(tw, sigma)
        assert np.allclose(back.values, direct.values, rtol=1e-12)
