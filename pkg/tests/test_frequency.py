import math
from dataclasses import replace

import numpy as np
import pytest

from slipbound import (CertificateParams, CertificationError, DomainError,
                       ExponentialSum, TransferFunction, eval_k, eval_k_mu,
                       mu_threshold, pll_closed_form, pll_omega,
                       pll_omega_minorant, popov_value, popov_value_mu,
                       popov_value_symmetric, verify_fdi, verify_pll_minorant)
from slipbound.frequency import minorant_coefficients

from conftest import PLL_H, PLL_S, PLL_T


def make_params(theta=1.0, eps=1.0, delta=1.0, tau=1.0, a=1.0, k=1):
    return CertificateParams(theta=theta, eps=eps, delta=delta, tau=tau, a=a, k=k)


class TestEvalK:
    def test_unit_filter_at_zero(self):
        tf = TransferFunction.from_pll(1.0, 0.4, 0.0)
        assert eval_k(tf, 0.0) == pytest.approx(1.0)

    def test_empty_is_zero(self):
        tf = TransferFunction(rho=0.0, h=0.0, kernel=ExponentialSum(()))
        assert eval_k(tf, 3.7) == 0.0

    def test_matches_closed_form(self):
        tf = TransferFunction.from_pll(0.1, 0.4, 0.1)
        for w in (0.0, 1.0, 5.0, 17.3):
            assert abs(eval_k(tf, w) - pll_closed_form(0.1, 0.4, 0.1, w)) < 1e-12

    def test_k_mu(self):
        tf = TransferFunction.from_pll(0.1, 0.4, 0.0)
        w = 2.0
        mu = 1e-3
        assert abs(eval_k_mu(tf, w, mu) - eval_k(tf, w)) <= mu * w * abs(eval_k(tf, w)) + 1e-15
        assert eval_k_mu(tf, 0.0, 0.7) == pytest.approx(eval_k(tf, 0.0))
        unit = TransferFunction(rho=-1.0, h=0.0, kernel=ExponentialSum(()))
        assert eval_k_mu(unit, 1.0, 1.0) == pytest.approx((1.0 - 1.0j) / 2.0)

    def test_k_mu_rejects_bad_mu(self):
        tf = TransferFunction.from_pll(0.1, 0.4, 0.0)
        with pytest.raises(DomainError):
            eval_k_mu(tf, 1.0, 0.0)


class TestPopovValue:
    def test_zero_transfer_function(self):
        # hand expansion with K = 0, alpha1 = -1, alpha2 = 1 gives tau w^2 - delta
        tf = TransferFunction(rho=0.0, h=0.0, kernel=ExponentialSum(()))
        p = make_params(tau=0.7, delta=0.3)
        for w in (0.0, 1.0, 2.5):
            assert popov_value(tf, p, -1.0, 1.0, w) == pytest.approx(0.7 * w * w - 0.3, abs=1e-14)

    def test_zero_frequency(self, pll_tf, recipe_params):
        k0 = eval_k(pll_tf, 0.0).real
        p = recipe_params
        expect = p.theta * k0 - (p.eps + p.tau) * k0 * k0 - p.delta
        assert popov_value(pll_tf, p, -1.0, 1.0, 0.0) == pytest.approx(expect, abs=1e-15)

    def test_against_symbolic_expansion_oracle(self, pll_tf, rng):
        # independent oracle: expand the multiplier form symbolically and
        # substitute numbers only at the end
        sympy = pytest.importorskip("sympy")
        w_s, a1_s, a2_s = sympy.symbols("w a1 a2", real=True)
        th_s, ep_s, de_s, ta_s = sympy.symbols("th ep de ta", positive=True)
        kr_s, ki_s = sympy.symbols("kr ki", real=True)
        K = kr_s + sympy.I * ki_s
        expr = sympy.re(th_s * K
                        - ta_s * sympy.conjugate(K + sympy.I * w_s / a1_s)
                        * (K + sympy.I * w_s / a2_s)) \
            - ep_s * (kr_s ** 2 + ki_s ** 2) - de_s
        fn = sympy.lambdify((w_s, a1_s, a2_s, th_s, ep_s, de_s, ta_s, kr_s, ki_s),
                            sympy.expand(expr), "numpy")
        p = make_params(theta=0.8, eps=0.4, delta=0.2, tau=0.05)
        for w in rng.uniform(0.0, 30.0, 50):
            K = eval_k(pll_tf, float(w))
            a1, a2 = -0.7, 1.3
            got = popov_value(pll_tf, p, a1, a2, float(w))
            want = fn(w, a1, a2, p.theta, p.eps, p.delta, p.tau, K.real, K.imag)
            assert got == pytest.approx(want, abs=1e-12)

    def test_symmetric_reduction_identity(self, pll_tf, rng):
        # general form == symmetric form when |alpha1| == alpha2, 1000 samples
        p = make_params(theta=1.1, eps=0.9, delta=0.33, tau=0.21)
        ae = 1.7
        ws = rng.uniform(0.0, 50.0, 1000)
        general = popov_value(pll_tf, p, -ae, ae, ws)
        symmetric = popov_value_symmetric(pll_tf, p, ae, ws)
        assert np.max(np.abs(general - symmetric)) < 1e-12

    def test_perturbation_identity(self, pll_tf, rng):
        # Pi_mu(w) (1 + mu^2 w^2) == Pi(w) + th mu w Im K + tau ae^-2 mu^2 w^4
        #                            - delta mu^2 w^2, with the same delta.
        # 1e-12 is relative to the term scale: the w^4 mu^2 term alone reaches
        # 1e5 at the range edge, far above one ulp of 1e-12 absolute.
        p = make_params(theta=1.0, eps=0.7, delta=0.25, tau=0.12)
        ae = 1.0
        for _ in range(1000):
            w = float(rng.uniform(0.0, 40.0))
            mu = float(rng.uniform(1e-6, 0.5))
            K = eval_k(pll_tf, w)
            lhs = popov_value_mu(pll_tf, p, ae, w, mu) * (1.0 + mu * mu * w * w)
            rhs = popov_value_symmetric(pll_tf, p, ae, w) \
                + p.theta * mu * w * K.imag \
                + p.tau * (ae ** -2) * mu * mu * w ** 4 \
                - p.delta * mu * mu * w * w
            scale = max(1.0, abs(rhs), p.tau * (ae ** -2) * mu * mu * w ** 4)
            assert abs(lhs - rhs) <= 1e-12 * scale


class TestVerifyFdi:
    def test_recipe_is_certified(self, pll_tf, recipe_params):
        res = verify_fdi(pll_tf, recipe_params, -1.0, 1.0)
        assert res.certified
        assert res.min_value >= 0.0
        assert res.tail.margin_at_cutoff >= 0.0
        assert res.delta1 == res.min_value

    def test_large_delta_fails_at_zero(self):
        # h = 0 keeps the value monotone near zero, so the argmin is the origin
        tf = TransferFunction.from_pll(PLL_T, PLL_S, 0.0)
        k0 = eval_k(tf, 0.0).real
        p = make_params(theta=1.0, eps=4.999, delta=2.0 * k0, tau=0.00128)
        res = verify_fdi(tf, p, -1.0, 1.0)
        assert not res.certified
        assert res.min_value < 0.0
        assert res.argmin == 0.0

    def test_delta_monotonicity(self, pll_tf, recipe_params):
        # growing delta can only lose certification, never gain it
        certified = []
        for factor in (1.0, 1.5, 4.0, 20.0):
            p = replace(recipe_params, delta=recipe_params.delta * factor)
            certified.append(verify_fdi(pll_tf, p, -1.0, 1.0).certified)
        for earlier, later in zip(certified, certified[1:]):
            assert earlier or not later

    def test_failure_never_raises(self, pll_tf):
        p = make_params(delta=50.0)
        res = verify_fdi(pll_tf, p, -1.0, 1.0)
        assert not res.certified and math.isfinite(res.min_value)

    def test_unresolvable_scan_refuses_certification(self, pll_tf):
        # a tiny tau pushes the tail cutoff so far out that the point budget
        # cannot resolve the transfer function's structure; the one-sided
        # check must refuse rather than certify off a sparse grid
        p = make_params(theta=1.0, eps=4.999, delta=0.05, tau=1e-12)
        res = verify_fdi(pll_tf, p, -1.0, 1.0)
        assert not res.grid.resolved
        assert not res.certified


class TestPllOmega:
    def test_zero_frequency_constant(self, recipe_params):
        p = recipe_params
        got = pll_omega(0.0, PLL_T, PLL_S, PLL_H, p.eps, p.delta, p.tau)
        assert got == pytest.approx(PLL_T - (p.eps + p.tau) * PLL_T ** 2 - p.delta, abs=1e-15)

    def test_no_delay_quartic_coefficient(self, recipe_params):
        p = recipe_params
        A, _, _ = minorant_coefficients(PLL_T, PLL_S, 0.0, p.eps, p.delta, p.tau)
        assert A == pytest.approx(p.tau * PLL_T ** 2)
        w = np.linspace(0.0, 10.0, 7)
        full = pll_omega(w, PLL_T, PLL_S, 0.0, p.eps, p.delta, p.tau)
        mino = pll_omega_minorant(w, PLL_T, PLL_S, 0.0, p.eps, p.delta, p.tau)
        # with h = 0 only the sin/cos bounds differ, both vanish
        assert np.max(np.abs(full - mino)) < 1e-12

    def test_cleared_denominator_identity(self, pll_tf, recipe_params, rng):
        # Omega(w) == Pi(w) (1 + T^2 w^2) for theta = 1, ae = 1
        p = recipe_params
        for w in rng.uniform(0.0, 30.0, 200):
            lhs = pll_omega(float(w), PLL_T, PLL_S, PLL_H, p.eps, p.delta, p.tau)
            rhs = popov_value_symmetric(pll_tf, p, 1.0, float(w)) * (1.0 + (PLL_T * w) ** 2)
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_majorizes_minorant(self, recipe_params):
        p = recipe_params
        w = np.linspace(0.0, 60.0, 100)
        full = pll_omega(w, PLL_T, PLL_S, PLL_H, p.eps, p.delta, p.tau)
        mino = pll_omega_minorant(w, PLL_T, PLL_S, PLL_H, p.eps, p.delta, p.tau)
        assert np.all(full >= mino - 1e-15)

    def test_minorant_certified_under_recipe(self, recipe_params):
        p = recipe_params
        res = verify_pll_minorant(PLL_T, PLL_S, PLL_H, p.eps, p.delta, p.tau)
        assert res.certified
        assert res.min_value >= 0.0


class TestMuThreshold:
    def test_pll_threshold(self, pll_tf, recipe_params):
        p = recipe_params
        res = mu_threshold(pll_tf, p, 1.0, 0.5 * p.delta, mu_tilde=0.025)
        assert res.mu_bar > 0.0
        assert res.mu_bar <= 0.025
        assert res.delta1 > 0.0
        assert res.L1 >= 0.0
        # regression baseline from the first certified run
        assert res.mu_bar == pytest.approx(0.0138231, rel=1e-3)

    def test_mu_tilde_caps(self, pll_tf, recipe_params):
        p = recipe_params
        res = mu_threshold(pll_tf, p, 1.0, 0.5 * p.delta, mu_tilde=1e-4)
        assert res.mu_bar == pytest.approx(1e-4)

    def test_sampled_recheck(self, pll_tf, recipe_params):
        p = recipe_params
        res = mu_threshold(pll_tf, p, 1.0, 0.5 * p.delta, mu_tilde=0.025)
        p_bar = replace(p, delta=0.5 * p.delta)
        ws = np.linspace(0.0, res.omega0, 2000)
        for mu in np.linspace(res.mu_bar / 21.0, res.mu_bar * 0.999, 20):
            vals = popov_value_mu(pll_tf, p_bar, 1.0, ws, float(mu))
            assert np.min(vals) >= 0.0

    def test_requires_strict_inequality(self, pll_tf, recipe_params):
        # delta_bar too close to the infeasible region: Pi_bar dips negative
        p = replace(recipe_params, delta=recipe_params.delta * 40.0)
        with pytest.raises(CertificationError):
            mu_threshold(pll_tf, p, 1.0, p.delta * 0.999, mu_tilde=0.02)

    def test_validates_inputs(self, pll_tf, recipe_params):
        with pytest.raises(DomainError):
            mu_threshold(pll_tf, recipe_params, 1.0, recipe_params.delta * 2.0, 0.01)
        with pytest.raises(DomainError):
            mu_threshold(pll_tf, recipe_params, 1.0, recipe_params.delta * 0.5, -1.0)

    def test_degenerate_real_transfer_function(self):
        # pure gain: K == 1 on the whole axis, Im K == 0, so L1 = 0 and the
        # ratio cap is vacuous; the threshold stays positive and finite
        tf = TransferFunction(rho=-1.0, h=0.0, kernel=ExponentialSum(()))
        p = make_params(theta=1.0, eps=0.3, delta=0.2, tau=0.1)
        res = mu_threshold(tf, p, 1.0, 0.1, mu_tilde=0.5)
        assert res.L1 == 0.0
        assert math.isinf(res.cap_ratio)
        assert 0.0 < res.mu_bar <= 0.5
