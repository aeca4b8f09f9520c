import math

import numpy as np
import pytest
from scipy.integrate import quad

from slipbound import (DecayEnvelope, DomainError, ExponentialSum, ExpTerm,
                       History, PllSpec, SystemSpec,
                       nonlinearity_from_callables, perturbed_forcing,
                       perturbed_kernel, pll_closed_form, pll_spec,
                       pll_to_volterra, sine_nonlinearity)

TWO_PI = 2.0 * math.pi


def abs_sine_integral(beta):
    """Closed form for int_0^{2pi} |sin(s) - beta| ds."""
    return 4.0 * (beta * math.asin(beta) + math.sqrt(1.0 - beta * beta))


class TestSineNonlinearity:
    def test_zero_detuning_boundary(self):
        nl = sine_nonlinearity(0.0)
        assert nl.mean_integral == 0.0

    def test_mean_and_abs_integrals_match_quadrature(self):
        # oracle: adaptive quadrature with the kinks split out
        nl = sine_nonlinearity(0.9)
        roots = [math.asin(0.9), math.pi - math.asin(0.9)]
        val, err = quad(lambda s: abs(math.sin(s) - 0.9), 0.0, TWO_PI,
                        points=roots, limit=200, epsabs=1e-13, epsrel=1e-13)
        assert err < 1e-10
        closed = abs_sine_integral(0.9)
        assert closed == pytest.approx(5.774729831411352, rel=1e-13)
        assert val == pytest.approx(closed, rel=1e-10)
        mean, _ = quad(lambda s: math.sin(s) - 0.9, 0.0, TWO_PI,
                       limit=200, epsabs=1e-13)
        assert mean == pytest.approx(nl.mean_integral, rel=1e-10)

    def test_slope_bounds_and_sup(self):
        nl = sine_nonlinearity(0.5)
        assert nl.alpha1 == -1.0
        assert nl.alpha2 == 1.0
        assert nl.m == 1.5

    @pytest.mark.parametrize("beta", [-0.1, 1.5])
    def test_rejects_bad_detuning(self, beta):
        with pytest.raises(DomainError):
            sine_nonlinearity(beta)

    def test_validate_passes(self):
        sine_nonlinearity(0.9).validate()

    def test_roots(self):
        roots = sine_nonlinearity(0.9).roots()
        assert len(roots) == 2
        assert roots[0] == pytest.approx(math.asin(0.9), abs=1e-12)
        assert roots[1] == pytest.approx(math.pi - math.asin(0.9), abs=1e-12)


class TestFromCallables:
    def test_recovers_sine_data(self):
        nl = nonlinearity_from_callables(TWO_PI,
                                         lambda s: np.sin(s) - 0.3,
                                         lambda s: np.cos(s))
        assert nl.alpha1 == pytest.approx(-1.0, abs=1e-9)
        assert nl.alpha2 == pytest.approx(1.0, abs=1e-9)
        assert nl.m == pytest.approx(1.3, abs=1e-9)
        assert nl.mean_integral == pytest.approx(-TWO_PI * 0.3, rel=1e-10)

    def test_rejects_positive_mean(self):
        with pytest.raises(DomainError):
            nonlinearity_from_callables(TWO_PI,
                                        lambda s: np.sin(s) + 0.3,
                                        lambda s: np.cos(s))


class TestHistoryAndEnvelope:
    def test_constant(self):
        hist = History.constant(2.0, 0.5)
        assert hist(-0.5) == 2.0 and hist(0.0) == 2.0

    def test_linear(self):
        hist = History.linear(1.0, 3.0, 0.5)
        assert hist(0.0) == pytest.approx(1.0)
        assert hist(-0.5) == pytest.approx(1.0 - 1.5)

    def test_table_validation(self):
        with pytest.raises(DomainError):
            History.from_table([-1.0, -0.5], [0.0, 0.0])  # must end at 0
        with pytest.raises(DomainError):
            History.from_table([-1.0, -1.0, 0.0], [0.0, 0.0, 0.0])

    def test_envelope_positivity(self):
        with pytest.raises(DomainError):
            DecayEnvelope(M=0.0, r=1.0)
        with pytest.raises(DomainError):
            DecayEnvelope(M=1.0, r=-1.0)


class TestPllSpec:
    def test_validation(self):
        with pytest.raises(DomainError):
            pll_spec(0.1, 1.2, 0.9, 0.1)
        with pytest.raises(DomainError):
            pll_spec(0.1, 0.4, 1.5, 0.1)
        with pytest.raises(DomainError):
            pll_spec(-0.1, 0.4, 0.9, 0.1)

    def test_defaults_give_root_start(self):
        pll = pll_spec(0.1, 0.4, 0.9, 0.1)
        assert abs(math.sin(pll.sigma0) - 0.9) < 1e-12
        assert pll.sigma_dot0 == pytest.approx(0.1 * 0.9)
        assert pll.h0 == pytest.approx(1.0)


class TestPllToVolterra:
    def test_structure(self, vol09):
        assert vol09.rho == pytest.approx(-0.4 * 0.1)
        (term,) = vol09.kernel.terms
        assert term.coeff == pytest.approx(0.6)
        assert term.rate == pytest.approx(10.0)
        assert term.onset == pytest.approx(0.1)
        assert isinstance(vol09.forcing, ExponentialSum)

    def test_laplace_match_against_numeric_oracle(self):
        # oracle: direct numeric Laplace integral of the kernel at 5 sample
        # points, plus the delayed-gain term; compare with the closed form.
        T, s, h = 1.0, 0.4, 0.0
        vol = pll_to_volterra(pll_spec(T, s, 0.5, h))
        pts = [0.3 + 0.0j, 1.0 + 2.0j, 0.5 - 1.0j, 2.0 + 0.5j, 0.1 + 3.0j]
        for p in pts:
            re, _ = quad(lambda t: (vol.kernel(t) * np.exp(-p * t)).real, 0.0, 60.0,
                         limit=400, epsabs=1e-12)
            im, _ = quad(lambda t: (vol.kernel(t) * np.exp(-p * t)).imag, 0.0, 60.0,
                         limit=400, epsabs=1e-12)
            k_numeric = -vol.rho * np.exp(-h * p) + (re + 1j * im)
            k_closed = T * (T * s * p + 1.0) / (T * p + 1.0) * np.exp(-p * h)
            assert abs(k_numeric - k_closed) < 1e-9

    def test_transfer_identity_on_imag_axis(self, vol09):
        # |-rho e^{-i w h} + Laplace(gamma)(i w) - K(i w)| small at 20 samples
        T, s, h = 0.1, 0.4, 0.1
        for w in np.linspace(0.0, 40.0, 20):
            p = 1j * w
            k_rep = -vol09.rho * np.exp(-p * h) + vol09.kernel.laplace(p)
            assert abs(k_rep - pll_closed_form(T, s, h, w)) < 1e-9

    def test_proportional_limit_kills_kernel(self):
        vol = pll_to_volterra(pll_spec(0.1, 0.999, 0.9, 0.1))
        (term,) = vol.kernel.terms
        assert term.coeff == pytest.approx(0.001, rel=1e-9)

    def test_zero_history_forcing(self):
        # constant history at a root: J = 0, alpha(t) = b e^{-t/T}, alpha(0) = b
        pll = pll_spec(0.1, 0.4, 0.9, 0.1)
        vol = pll_to_volterra(pll)
        b = pll.sigma_dot0  # phi vanishes on the history
        assert float(vol.forcing(0.0)) == pytest.approx(b, rel=1e-12)
        assert float(vol.forcing(0.3)) == pytest.approx(b * math.exp(-3.0), rel=1e-12)

    def test_nonroot_history_uses_quadrature(self):
        # oracle: evaluate the history integral J directly
        T, s, h, beta = 0.2, 0.3, 0.15, 0.5
        sigma0 = 0.7  # phi(sigma0) != 0
        hist = History.constant(sigma0, h)
        pll = PllSpec(T=T, s=s, beta=beta, h=h, sigma0=sigma0,
                      sigma_dot0=0.05, history=hist)
        vol = pll_to_volterra(pll)
        phi0 = math.sin(sigma0) - beta
        b = 0.05 + s * T * phi0
        j_full, _ = quad(lambda lam: math.exp((lam + h) / T) * phi0, -h, 0.0,
                         epsabs=1e-13)
        t = 2.0 * h
        expect = math.exp(-t / T) * (b - (1.0 - s) * j_full)
        assert float(vol.forcing(t)) == pytest.approx(expect, rel=1e-9)
        # inside the first delay interval J is partial
        t = 0.5 * h
        j_part, _ = quad(lambda lam: math.exp((lam + h) / T) * phi0, -h, t - h,
                         epsabs=1e-13)
        expect = math.exp(-t / T) * (b - (1.0 - s) * j_part)
        assert float(vol.forcing(t)) == pytest.approx(expect, rel=1e-9)

    def test_envelope_bound_holds(self, vol09):
        vol09.validate()
        M, r = vol09.envelope.M, vol09.envelope.r
        t = np.linspace(0.0, 20.0 / r, 2001)
        assert np.all(np.abs(vol09.kernel(t)) <= M * np.exp(-r * t) * (1 + 1e-9))
        assert np.all(np.abs(np.asarray(vol09.forcing(t))) <= M * np.exp(-r * t) * (1 + 1e-9))


class TestPerturbed:
    def test_empty_kernel_stays_zero(self):
        nl = sine_nonlinearity(0.5)
        spec = SystemSpec(rho=0.0, h=0.0, kernel=ExponentialSum(()),
                          forcing=ExponentialSum(()), nonlinearity=nl,
                          envelope=DecayEnvelope(M=1.0, r=1.0),
                          history=History.constant(0.0, 0.0), sigma0=0.0,
                          sigma_dot0=0.0)
        assert perturbed_kernel(spec, 0.5, 1.3) == 0.0

    def test_confluent_case_against_convolution_oracle(self):
        # gamma(t) = e^{-t}, mu = 1: smoothed kernel is t e^{-t}
        nl = sine_nonlinearity(0.5)
        spec = SystemSpec(rho=0.0, h=0.0,
                          kernel=ExponentialSum((ExpTerm(1.0, 1.0, 0.0),)),
                          forcing=ExponentialSum(()), nonlinearity=nl,
                          envelope=DecayEnvelope(M=1.0, r=1.0),
                          history=History.constant(0.0, 0.0), sigma0=0.0,
                          sigma_dot0=0.0)
        for t in (0.3, 1.0, 2.7):
            oracle, _ = quad(lambda lam: math.exp((lam - t) / 1.0) * math.exp(-lam),
                             0.0, t, epsabs=1e-13)
            got = perturbed_kernel(spec, 1.0, t)
            assert got == pytest.approx(t * math.exp(-t), abs=1e-9)
            assert got == pytest.approx(oracle, abs=1e-9)

    def test_near_confluent_stays_accurate(self):
        # rate within 1e-10 of 1/mu: the naive difference quotient cancels,
        # the expm1 form must not
        nl = sine_nonlinearity(0.5)
        rate = 10.0
        mu = 0.1000000001
        spec = SystemSpec(rho=0.0, h=0.0,
                          kernel=ExponentialSum((ExpTerm(1.7, rate, 0.2),)),
                          forcing=ExponentialSum(()), nonlinearity=nl,
                          envelope=DecayEnvelope(M=2.0, r=1.0),
                          history=History.constant(0.0, 0.0), sigma0=0.0,
                          sigma_dot0=0.0)
        t = 1.3
        oracle, err = quad(lambda lam: math.exp((lam - t) / mu) * 1.7
                           * math.exp(-rate * (lam - 0.2)) / mu, 0.2, t,
                           epsabs=1e-14, limit=400)
        got = perturbed_kernel(spec, mu, t)
        assert got == pytest.approx(oracle, rel=1e-10)

    def test_generic_term_against_convolution_oracle(self, vol09):
        mu = 0.03
        for t in (0.05, 0.1, 0.37, 1.1):
            oracle, _ = quad(lambda lam: math.exp((lam - t) / mu) / mu * float(vol09.kernel(lam)),
                             0.0, t, epsabs=1e-13, limit=400)
            spike = -(vol09.rho / mu) * math.exp((vol09.h - t) / mu) if t >= vol09.h else 0.0
            assert perturbed_kernel(vol09, mu, t) == pytest.approx(oracle + spike, abs=1e-9)

    def test_forcing_initial_value(self, vol09):
        assert perturbed_forcing(vol09, 0.01, 0.0) == pytest.approx(vol09.sigma_dot0)

    def test_forcing_against_quadrature_oracle(self, vol09):
        mu = 0.02
        for t in (0.05, 0.4):
            oracle, _ = quad(lambda lam: math.exp((lam - t) / mu) / mu * float(vol09.forcing(lam)),
                             0.0, t, epsabs=1e-13, limit=400)
            expect = vol09.sigma_dot0 * math.exp(-t / mu) + oracle  # J0 = 0 at a root
            assert perturbed_forcing(vol09, mu, t) == pytest.approx(expect, abs=1e-9)

    def test_boundary_layer_agreement(self, vol09):
        # at mu = 1e-6 the smoothed kernel and forcing track the unperturbed
        # ones for t >= 10 mu, away from the absorbed-feedback spike that the
        # kernel carries in a width-O(mu) window after the onset h
        mu = 1e-6
        ts = np.geomspace(10 * mu, 2.0, 60)
        h = vol09.h
        ts = ts[(ts < h) | (ts > h + 60 * mu)]
        for t in ts:
            gk = perturbed_kernel(vol09, mu, float(t))
            assert abs(gk - float(vol09.kernel(t))) < 1e-4
            gf = perturbed_forcing(vol09, mu, float(t))
            assert abs(gf - float(vol09.forcing(t))) < 1e-4

    def test_rejects_nonpositive_mu(self, vol09):
        with pytest.raises(DomainError):
            perturbed_kernel(vol09, 0.0, 1.0)
        with pytest.raises(DomainError):
            perturbed_forcing(vol09, -1.0, 1.0)
