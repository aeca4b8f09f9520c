import math

import pytest

from slipbound import (DomainError, NoCertificateError, min_certified_k,
                       mu_sweep, pll_spec, pll_to_volterra, q0)
from slipbound.search import pll_recipe

from conftest import PAPER_ROWS, PLL_H, PLL_H0, PLL_S, PLL_T


class TestRecipe:
    def test_reference_point(self):
        p = pll_recipe(PLL_T, PLL_S, PLL_H0)
        # g0 = max(0.2, 1.28) = 1.28 and 2 sqrt(eps delta) = 1 - g0 T^4
        assert p.theta == 1.0 and p.a == 1.0
        assert p.tau == pytest.approx(1.28e-3, rel=1e-12)
        assert 2.0 * math.sqrt(p.eps * p.delta) == pytest.approx(0.999872, rel=1e-9)

    def test_no_delay_pure_proportional(self):
        # h0 = 0 with s -> 1 drives g0 to 0 and the product to 1
        p = pll_recipe(0.5, 1.0, 0.0)
        assert 2.0 * math.sqrt(p.eps * p.delta) == pytest.approx(1.0, rel=1e-9)

    def test_degenerate_rejected(self):
        with pytest.warns(UserWarning):
            with pytest.raises(DomainError):
                pll_recipe(2.0, 0.4, 1.0)  # g0 T^4 = 20.48

    def test_warns_outside_regime(self):
        with pytest.warns(UserWarning):
            pll_recipe(0.95, 0.4, 0.5)


class TestMinCertifiedK:
    @pytest.mark.parametrize("beta,r0", PAPER_ROWS)
    def test_analytic_rows(self, beta, r0):
        pll = pll_spec(PLL_T, PLL_S, beta, PLL_H)
        cert = min_certified_k(pll, theorem="T3", strategy="recipe")
        assert cert.slipped_cycles_bound == r0
        assert cert.k == r0 + 1
        assert cert.q_provenance == "pll"

    def test_free_search_not_worse_than_recipe(self, pll09):
        recipe_cert = min_certified_k(pll09, theorem="T3", strategy="recipe")
        auto_cert = min_certified_k(pll09, theorem="T3", strategy="auto",
                                    budget=320, restarts=4, seed=3)
        assert auto_cert.slipped_cycles_bound <= recipe_cert.slipped_cycles_bound

    def test_determinism(self, pll09):
        a = min_certified_k(pll09, theorem="T3", strategy="recipe", seed=7)
        b = min_certified_k(pll09, theorem="T3", strategy="recipe", seed=7)
        assert a.record() == b.record()

    def test_certificates_revalidate(self, pll09):
        cert = min_certified_k(pll09, theorem="T3", strategy="recipe")
        assert cert.revalidate()

    def test_zero_cap(self, pll09):
        with pytest.raises(NoCertificateError):
            min_certified_k(pll09, theorem="T3", strategy="recipe", k_cap=0)

    def test_unknown_selector(self, pll09):
        with pytest.raises(DomainError):
            min_certified_k(pll09, theorem="T2")

    def test_perturbed_path(self, pll09):
        cert = min_certified_k(pll09, theorem="T4", strategy="recipe")
        assert cert.theorem == "T4"
        assert cert.mu_max > 0.0
        # regression baselines from the first certified run
        assert cert.k == 13
        assert cert.mu_max == pytest.approx(0.0138231, rel=1e-3)


@pytest.fixture(scope="module")
def sweep(pll09):
    cert = min_certified_k(pll09, theorem="T4", strategy="recipe")
    mus = [cert.mu_max * f for f in (0.15, 0.3, 0.5, 0.7, 0.9)]
    rows = mu_sweep(pll09, cert, mus, horizon=60.0)
    return cert, rows


class TestMuSweep:
    def test_rows_below_mu_max_stay_definite(self, sweep):
        cert, rows = sweep
        assert all(row.pd_ok for row in rows)

    def test_bound_approaches_limit(self, pll09, sweep):
        cert, rows = sweep
        vol = pll_to_volterra(pll09)
        qz = q0(cert.params.theta, cert.params.eps, cert.params.tau,
                vol.envelope.M, vol.envelope.r, vol.nonlinearity.m, vol.rho, vol.h)
        gaps = [abs(row.q_mu - qz) for row in rows]
        assert gaps[0] < gaps[-1]
        assert gaps[0] < 0.1 * qz

    def test_simulated_slips_below_certificate(self, sweep):
        cert, rows = sweep
        assert all(row.sim_slips < cert.k for row in rows)

    def test_rejects_mu_beyond_validity(self, pll09, sweep):
        cert, _ = sweep
        vol = pll_to_volterra(pll09)
        with pytest.raises(DomainError):
            mu_sweep(pll09, cert, [1.5 / vol.envelope.r], horizon=10.0)
