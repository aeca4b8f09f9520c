"""Certificate search: the analytic loop-filter recipe plus free refinement.

The minimal certified cycle count is found k-first: for each k the analytic
recipe (when the system is a PLL) is tried before a derivative-free simplex
search over log-multipliers with frequency failures penalized.  Search
results are always re-verified through the full certification path before
being returned, so a returned certificate never depends on the fast
objective evaluations.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import bounds as bounds_mod
from .certificates import (CertificateParams, SlipCertificate, _base_integrals,
                           certify_matrix_explicit, certify_perturbed,
                           is_positive_definite, r_coefficients, t_matrix)
from .errors import CertificationError, DomainError, NoCertificateError
from .frequency import TransferFunction, verify_fdi
from .model import PllSpec, SystemSpec, pll_to_volterra
from .simulator import count_slipped_cycles, integrate

log = logging.getLogger(__name__)

_DELTA_BACKOFF = 1e-12


def pll_recipe(T: float, s: float, h0: float) -> CertificateParams:
    """Analytic multipliers for the PLL: eps = b0/T, delta = a0*T, tau = g0*T^3.

    g0 = max(s*h0^2/2, (h0+1-s)^2/2) makes the quartic minorant nonnegative,
    and a0 = b0 = (1 - g0*T^4)/2 is the optimal split, giving
    2*sqrt(eps*delta) = 1 - g0*T^4.  That choice is exactly tight at
    omega = 0, so delta is backed off by a relative 1e-12: the emitted
    parameters sit strictly inside the feasible region and the one-sided
    frequency scan cannot fail on roundoff at the boundary.

    Intended regime T <= 0.9, h0 <= 1; wider inputs only warn.
    """
    if T <= 0.0:
        raise DomainError(f"T must be > 0, got {T}")
    if T > 0.9 or h0 > 1.0:
        warnings.warn(f"recipe used outside its intended regime (T={T}, h0={h0})",
                      stacklevel=2)
    # all multipliers must be strictly positive; the degenerate h0 = 0,
    # s -> 1 corner would give g0 = 0, so floor it
    g0 = max(0.5 * s * h0 * h0, 0.5 * (h0 + 1.0 - s) ** 2, 1e-9)
    g4 = g0 * T ** 4
    if g4 >= 1.0:
        raise DomainError(f"recipe degenerate: g0*T^4 = {g4:g} >= 1")
    half = 0.5 * (1.0 - g4)
    return CertificateParams(theta=1.0, eps=half / T,
                             delta=half * T * (1.0 - _DELTA_BACKOFF),
                             tau=g0 * T ** 3, a=1.0, k=1)


def _resolve(spec: SystemSpec | PllSpec):
    if isinstance(spec, PllSpec):
        vol = pll_to_volterra(spec)
        tf = TransferFunction.from_pll(spec.T, spec.s, spec.h)
        return spec, vol, tf
    return None, spec, TransferFunction.from_system(spec)


def _pll_q_applicable(pll: PllSpec, vol: SystemSpec) -> bool:
    """The sharp PLL bound assumes forcing amplitude b = K(0)*beta = T*beta."""
    nl = vol.nonlinearity
    b = pll.sigma_dot0 + pll.s * pll.T * float(nl.value(pll.history(-pll.h)))
    return abs(b - pll.T * pll.beta) <= 1e-12 * max(1.0, pll.T * pll.beta)


def _search_starts(base: Optional[CertificateParams], tf: TransferFunction,
                   rng: np.random.Generator, restarts: int) -> list[np.ndarray]:
    if base is None:
        k0 = abs(tf.eval(0.0)) or 1.0
        base = CertificateParams(theta=1.0, eps=1.0 / (4.0 * k0), delta=k0 / 4.0,
                                 tau=k0 / 40.0, a=1.0, k=1)
    center = np.array([math.log(base.theta), math.log(base.eps),
                       math.log(base.delta), math.log(base.tau), base.a])
    starts = [center]
    for _ in range(max(restarts - 1, 0)):
        x = center.copy()
        x[:4] += rng.uniform(-1.2, 1.2, 4) * math.log(10.0)  # decade-scale spread
        x[4] = rng.uniform(0.0, 1.0)
        starts.append(x)
    return starts


def _params_from_vector(x: np.ndarray, k: int) -> Optional[CertificateParams]:
    logs = np.clip(x[:4], -46.0, 46.0)
    a = min(max(float(x[4]), 0.0), 1.0)
    try:
        return CertificateParams(theta=float(np.exp(logs[0])), eps=float(np.exp(logs[1])),
                                 delta=float(np.exp(logs[2])), tau=float(np.exp(logs[3])),
                                 a=a, k=k)
    except DomainError:
        return None


def _condition_margin(nl, params: CertificateParams, x_bound: float) -> float:
    """Relative positive-definiteness margin of both matrices (> 0 means feasible).

    Uses the fixed-node quadrature for the parameter-dependent integral; the
    final certificate re-checks through the adaptive path.
    """
    int_phi, int_abs, int_abs_phi = _base_integrals(nl)
    shift = x_bound / (params.theta * params.k)
    worst = math.inf
    for num in (int_phi - shift, int_phi + shift):
        rj = num / int_abs
        r0j = num / int_abs_phi
        m = t_matrix(params, rj, r0j)
        d2 = m[0, 0] * m[1, 1] - m[0, 1] ** 2
        d3 = float(np.linalg.det(m))
        worst = min(worst,
                    d2 / (params.eps * params.delta),
                    d3 / (params.eps * params.delta * params.tau))
    return worst


@dataclass(frozen=True)
class _NearMiss:
    objective: float
    params: Optional[CertificateParams]
    k: int


def min_certified_k(spec: SystemSpec | PllSpec, theorem: str = "T3",
                    strategy: str = "auto", k_cap: int = 64,
                    budget: int = 2000, restarts: int = 8, seed: int = 0,
                    mu_tilde: Optional[float] = None,
                    delta_bar: Optional[float] = None) -> SlipCertificate:
    """Smallest k with a verified certificate ("slips fewer than k cycles").

    strategy "recipe" tries only the analytic parameters, "search" only the
    simplex refinement, "auto" both (recipe first, so the free search can
    never do worse on a PLL).  The certified statement is reported alongside
    r0 = k - 1, the bound on completed slipped cycles.
    """
    if theorem not in ("T3", "T4"):
        raise DomainError(f"searchable criteria are T3 and T4, got {theorem}")
    if strategy not in ("recipe", "search", "auto"):
        raise DomainError(f"unknown strategy {strategy!r}")
    if k_cap < 1:
        raise NoCertificateError("k cap is zero; nothing to try", {"k_cap": k_cap})

    pll, vol, tf = _resolve(spec)
    nl = vol.nonlinearity
    M, r = vol.envelope.M, vol.envelope.r
    if mu_tilde is None:
        mu_tilde = 0.25 / r
    rng = np.random.default_rng(seed)

    recipe = None
    recipe_q = None
    if pll is not None and strategy in ("recipe", "auto"):
        recipe = pll_recipe(pll.T, pll.s, pll.h0)
        if theorem == "T3" and _pll_q_applicable(pll, vol):
            recipe_q = ("pll", bounds_mod.pll_q(pll.T, pll.s, pll.beta, pll.h0))
        elif theorem == "T3":
            recipe_q = ("envelope",
                        bounds_mod.energy_bound_q(recipe.theta, recipe.eps, recipe.tau,
                                                  M, r, nl.m, vol.rho))

    best = _NearMiss(objective=math.inf, params=None, k=0)

    def run_check(params: CertificateParams, q_info) -> Optional[SlipCertificate]:
        if theorem == "T4":
            try:
                return certify_perturbed(vol, params, mu_tilde, delta_bar)
            except CertificationError as exc:
                log.debug("T4 candidate rejected: %s", exc)
                return None
        provenance, q = q_info
        return certify_matrix_explicit(tf, nl, params, q, q_provenance=provenance,
                                       sigma0=vol.sigma0)

    for k in range(1, k_cap + 1):
        if recipe is not None:
            params = recipe.with_k(k)
            if theorem == "T4":
                cert = run_check(params, None)
            else:
                cert = run_check(params, recipe_q)
            if cert is not None:
                return cert

        if strategy in ("search", "auto"):
            found: list[SlipCertificate] = []
            per_start = max(budget // max(restarts, 1), 20)

            def objective(x, k=k):
                nonlocal best
                params = _params_from_vector(x, k)
                if params is None:
                    return 1e6
                fdi = verify_fdi(tf, params, nl.alpha1, nl.alpha2)
                if not fdi.certified:
                    val = 10.0 + min(100.0, max(0.0, -fdi.min_value))
                    if val < best.objective:
                        best = _NearMiss(val, params, k)
                    return val
                if theorem == "T4":
                    xb = bounds_mod.q0(params.theta, params.eps, params.tau,
                                       M, r, nl.m, vol.rho, vol.h)
                else:
                    xb = bounds_mod.energy_bound_q(params.theta, params.eps, params.tau,
                                                   M, r, nl.m, vol.rho)
                margin = _condition_margin(nl, params, xb)
                val = -margin
                if val < best.objective:
                    best = _NearMiss(val, params, k)
                return val

            for start in _search_starts(recipe, tf, rng, restarts):
                res = minimize(objective, start, method="Nelder-Mead",
                               options={"maxfev": per_start, "xatol": 1e-6,
                                        "fatol": 1e-9, "adaptive": True})
                if res.fun < 0.0:
                    params = _params_from_vector(res.x, k)
                    if params is None:
                        continue
                    if theorem == "T4":
                        cert = run_check(params, None)
                    else:
                        q = bounds_mod.energy_bound_q(params.theta, params.eps, params.tau,
                                                      M, r, nl.m, vol.rho)
                        cert = run_check(params, ("envelope", q))
                    if cert is not None:
                        found.append(cert)
            if found:
                key = lambda c: (c.params.theta, c.params.eps, c.params.delta,
                                 c.params.tau, c.params.a)
                return min(found, key=key)

    raise NoCertificateError(
        f"no certificate up to k = {k_cap}",
        {"best_objective": best.objective, "best_k": best.k,
         "best_params": best.params})


@dataclass(frozen=True)
class MuSweepRow:
    mu: float
    q_mu: float
    pd_ok: bool
    sim_slips: int


def mu_sweep(spec: SystemSpec | PllSpec, certificate: SlipCertificate,
             mus: Sequence[float], dt: Optional[float] = None,
             horizon: Optional[float] = None) -> list[MuSweepRow]:
    """Per-mu table at the certified k: bound value, matrix check, simulated slips."""
    _, vol, _ = _resolve(spec)
    nl = vol.nonlinearity
    params = certificate.params
    M, r = vol.envelope.M, vol.envelope.r
    rows = []
    for mu in mus:
        qm = bounds_mod.q_mu(params.theta, params.eps, params.tau, M, r, nl.m,
                             vol.rho, vol.h, float(mu), vol.sigma_dot0)
        if qm >= 0.0:
            rc = r_coefficients(nl, params, qm)
            pd_ok = all(is_positive_definite(t_matrix(params, rj, r0j))
                        for rj, r0j in zip(rc.r, rc.r0))
        else:
            pd_ok = False
        traj = integrate(vol, mu=float(mu), dt=dt, horizon=horizon)
        count = count_slipped_cycles(traj, nl.period)
        rows.append(MuSweepRow(mu=float(mu), q_mu=qm, pd_ok=pd_ok, sim_slips=count.k))
    return rows
