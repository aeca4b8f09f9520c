"""Slip certificates: auxiliary weights, matrix conditions, and the four checkers.

A certificate asserts that every admissible trajectory deviates from its
start by less than k periods ("slips fewer than k cycles").  Each checker
combines the frequency-domain inequality with an algebraic condition built
from ratios of periodic integrals and an energy bound x:

* T1 -- scalar condition 4 delta > theta^2 r_P^2 with caller-supplied x;
* T2 -- positive definiteness of two 3x3 matrices with caller-supplied x;
* T3 -- T2's matrices with the explicit envelope or PLL bound q
         (symmetric slopes, start at a root of phi);
* T4 -- T3 at the vanishing-mu limit bound q0, extended to the singularly
         perturbed loop for mu below a constructive threshold.

Positive definiteness is decided by Sylvester minors in exact rational
arithmetic on the given entries: no tolerance slack, ties fail.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from . import bounds as bounds_mod
from .errors import DomainError, QuadratureError
from .frequency import (FrequencyCheckResult, TransferFunction,
                        mu_threshold, verify_fdi)
from .model import PeriodicNonlinearity, SystemSpec

log = logging.getLogger(__name__)

_QUAD_ABS_TOL = 1e-10


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class CertificateParams:
    """Free multipliers of the certificate plus the candidate cycle count."""

    theta: float
    eps: float
    delta: float
    tau: float
    a: float = 1.0
    k: int = 1

    def __post_init__(self):
        for name in ("theta", "eps", "delta", "tau"):
            if getattr(self, name) <= 0.0:
                raise DomainError(f"multiplier {name} must be > 0, got {getattr(self, name)}")
        if not (0.0 <= self.a <= 1.0):
            raise DomainError(f"convex weight a must lie in [0, 1], got {self.a}")
        if self.k < 1 or self.k != int(self.k):
            raise DomainError(f"cycle count k must be a positive integer, got {self.k}")

    @property
    def a0(self) -> float:
        return 1.0 - self.a

    def with_k(self, k: int) -> "CertificateParams":
        return replace(self, k=int(k))


# ---------------------------------------------------------------------------
# auxiliary weights


def phi_factor(nl: PeriodicNonlinearity, sigma):
    """Phi(sigma) = sqrt((1 - phi'(sigma)/alpha1)(1 - phi'(sigma)/alpha2)).

    The radicand is nonnegative whenever the slope stays inside
    [alpha1, alpha2]; values within -1e-12 are clamped to zero (roundoff),
    anything lower signals inconsistent slope bounds.
    """
    slope = np.asarray(nl.slope(sigma), dtype=float)
    radicand = (1.0 - slope / nl.alpha1) * (1.0 - slope / nl.alpha2)
    low = np.min(radicand)
    if low < -1e-12:
        raise DomainError(f"slope escapes [alpha1, alpha2]: radicand reaches {low:g}")
    val = np.sqrt(np.maximum(radicand, 0.0))
    if val.ndim == 0:
        return float(val)
    return val


def p_factor(eps: float, tau: float, phi_factor_value):
    """P(eps, tau, sigma) = sqrt(eps + tau * Phi(sigma)^2)."""
    if eps < 0.0 or tau < 0.0:
        raise DomainError(f"p_factor needs eps, tau >= 0, got {eps}, {tau}")
    v = np.asarray(phi_factor_value, dtype=float)
    out = np.sqrt(eps + tau * v * v)
    if out.ndim == 0:
        return float(out)
    return out


def f_weight(nl: PeriodicNonlinearity, r: float, sigma):
    """phi - r |phi|, the plain comparison weight."""
    v = np.asarray(nl.value(sigma), dtype=float)
    out = v - r * np.abs(v)
    return float(out) if out.ndim == 0 else out


def psi_weight(nl: PeriodicNonlinearity, r0: float, sigma):
    """phi - r0 |phi| Phi, the slope-weighted comparison weight."""
    v = np.asarray(nl.value(sigma), dtype=float)
    out = v - r0 * np.abs(v) * phi_factor(nl, sigma)
    return float(out) if out.ndim == 0 else out


def y_weight(nl: PeriodicNonlinearity, r1: float, eps: float, tau: float, sigma):
    """phi - r1 |phi| P(eps, tau, .), the multiplier-weighted comparison weight."""
    v = np.asarray(nl.value(sigma), dtype=float)
    out = v - r1 * np.abs(v) * p_factor(eps, tau, phi_factor(nl, sigma))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# periodic integrals


@dataclass(frozen=True)
class PeriodicIntegrals:
    """The four quadratures over one period entering the r ratios."""

    int_phi: float        # int phi
    int_abs: float        # int |phi|
    int_abs_phi_factor: float   # int |phi| Phi
    int_abs_p: float      # int |phi| P(eps, tau, .)
    eps: float
    tau: float


def _phi_factor_kinks(nl: PeriodicNonlinearity) -> tuple[float, ...]:
    """Interior zeros of Phi in (0, period): sqrt kinks of the weighted integrands."""
    grid = np.linspace(0.0, nl.period, 2048, endpoint=False)
    vals = np.asarray(phi_factor(nl, grid), dtype=float)
    out = []
    for i in range(1, len(grid) - 1):
        if vals[i] < 1e-3 and vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]:
            res = minimize_scalar(lambda s: float(phi_factor(nl, s)),
                                  bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                                  options={"xatol": 1e-13})
            if res.fun < 1e-9 and 0.0 < res.x < nl.period:
                out.append(float(res.x))
    return tuple(out)


@lru_cache(maxsize=128)
def _split_points(nl: PeriodicNonlinearity) -> tuple[float, ...]:
    pts = sorted(set(r for r in nl.roots() if 0.0 < r < nl.period)
                 | set(_phi_factor_kinks(nl)))
    return tuple(pts)


def _piecewise_quad(fn, a: float, b: float, splits) -> float:
    total, err_total = 0.0, 0.0
    edges = [a] + [s for s in splits if a < s < b] + [b]
    for lo, hi in zip(edges, edges[1:]):
        val, err = quad(fn, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-12)
        total += val
        err_total += err
    if err_total > _QUAD_ABS_TOL:
        raise QuadratureError(f"periodic quadrature error estimate {err_total:g} "
                              f"exceeds {_QUAD_ABS_TOL:g}")
    return total


def periodic_integrals(nl: PeriodicNonlinearity, eps: float, tau: float) -> PeriodicIntegrals:
    """Adaptive quadrature of the four period integrals.

    |phi| is kinked at the roots of phi and the slope-weighted integrands at
    the zeros of Phi; the integration interval is split there so every piece
    is smooth.
    """
    splits = _split_points(nl)
    f = lambda s: float(nl.value(s))
    int_phi = _piecewise_quad(f, 0.0, nl.period, splits)
    int_abs = _piecewise_quad(lambda s: abs(f(s)), 0.0, nl.period, splits)
    int_abs_phi = _piecewise_quad(lambda s: abs(f(s)) * float(phi_factor(nl, s)),
                                  0.0, nl.period, splits)
    int_abs_p = _piecewise_quad(
        lambda s: abs(f(s)) * float(p_factor(eps, tau, phi_factor(nl, s))),
        0.0, nl.period, splits)
    return PeriodicIntegrals(int_phi=int_phi, int_abs=int_abs,
                             int_abs_phi_factor=int_abs_phi, int_abs_p=int_abs_p,
                             eps=eps, tau=tau)


@lru_cache(maxsize=128)
def _base_integrals(nl: PeriodicNonlinearity) -> tuple[float, float, float]:
    """(int phi, int |phi|, int |phi| Phi): the parameter-free quadratures."""
    pi = periodic_integrals(nl, 1.0, 0.0)
    return pi.int_phi, pi.int_abs, pi.int_abs_phi_factor


@lru_cache(maxsize=128)
def _gauss_nodes(nl: PeriodicNonlinearity, order: int = 160):
    """Fixed Gauss-Legendre nodes per smooth piece, for fast P-weighted integrals.

    Used only inside search objectives; certificates always go through the
    adaptive path.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    splits = _split_points(nl)
    edges = [0.0] + list(splits) + [nl.period]
    nodes, weights = [], []
    for lo, hi in zip(edges, edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(half * x + 0.5 * (hi + lo))
        weights.append(half * w)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    absphi = np.abs(np.asarray(nl.value(nodes), dtype=float))
    phifac = np.asarray(phi_factor(nl, nodes), dtype=float)
    return weights, absphi, phifac


def fast_int_abs_p(nl: PeriodicNonlinearity, eps: float, tau: float) -> float:
    w, absphi, phifac = _gauss_nodes(nl)
    return float(np.sum(w * absphi * np.sqrt(eps + tau * phifac ** 2)))


# ---------------------------------------------------------------------------
# r ratios and matrices


@dataclass(frozen=True)
class RCoefficients:
    """The six comparison ratios; index 0 is j=1 (-x/(theta k)), index 1 is j=2 (+)."""

    r: tuple[float, float]        # denominator int |phi|
    r0: tuple[float, float]       # denominator int |phi| Phi
    r1: tuple[float, float]       # denominator int |phi| P(eps, tau, .)
    integrals: PeriodicIntegrals


def r_coefficients(nl: PeriodicNonlinearity, params: CertificateParams, x: float,
                   integrals: Optional[PeriodicIntegrals] = None) -> RCoefficients:
    """Ratios (int phi +/- x/(theta k)) over the three weighted norms of phi."""
    if x < 0.0:
        raise DomainError(f"bound constant x must be >= 0, got {x}")
    ints = integrals if integrals is not None else periodic_integrals(nl, params.eps, params.tau)
    if min(ints.int_abs, ints.int_abs_phi_factor, ints.int_abs_p) <= 0.0:
        raise DomainError("weighted norms of phi vanish (phi == 0?)")
    shift = x / (params.theta * params.k)
    nums = (ints.int_phi - shift, ints.int_phi + shift)
    return RCoefficients(
        r=tuple(n / ints.int_abs for n in nums),
        r0=tuple(n / ints.int_abs_phi_factor for n in nums),
        r1=tuple(n / ints.int_abs_p for n in nums),
        integrals=ints,
    )


def t_matrix(params: CertificateParams, r_j: float, r0_j: float) -> np.ndarray:
    """The 3x3 symmetric certificate matrix for one comparison ratio pair."""
    off_a = params.a * params.theta * r_j / 2.0
    off_a0 = params.a0 * params.theta * r0_j / 2.0
    return np.array([
        [params.eps, off_a, 0.0],
        [off_a, params.delta, off_a0],
        [0.0, off_a0, params.tau],
    ])


def is_positive_definite(m: np.ndarray) -> bool:
    """Sylvester's criterion with exact rational arithmetic on the entries.

    No tolerance slack: a zero leading minor is not positive definite.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise DomainError(f"expected a 3x3 matrix, got shape {m.shape}")
    if not (m[0, 1] == m[1, 0] and m[0, 2] == m[2, 0] and m[1, 2] == m[2, 1]):
        raise DomainError("matrix is not symmetric")
    e = [[Fraction(float(m[i, j])) for j in range(3)] for i in range(3)]
    d1 = e[0][0]
    d2 = e[0][0] * e[1][1] - e[0][1] * e[0][1]
    d3 = (e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[1][2])
          - e[0][1] * (e[0][1] * e[2][2] - e[1][2] * e[0][2])
          + e[0][2] * (e[0][1] * e[1][2] - e[1][1] * e[0][2]))
    return d1 > 0 and d2 > 0 and d3 > 0


def _minor_values(m: np.ndarray) -> tuple[float, float, float]:
    d1 = float(m[0, 0])
    d2 = float(m[0, 0] * m[1, 1] - m[0, 1] ** 2)
    d3 = float(np.linalg.det(m))
    return d1, d2, d3


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class SlipCertificate:
    """A verified bound: trajectories slip fewer than k cycles.

    ``slipped_cycles_bound`` = k - 1 is the bound on the number of completed
    slipped cycles, the convention used in reports.  All stored conditions
    can be re-run from the stored fields via :meth:`revalidate`.
    """

    k: int
    theorem: str
    params: CertificateParams
    q_used: float
    q_provenance: str
    fdi: FrequencyCheckResult
    diagnostics: dict
    tf: TransferFunction
    nl: PeriodicNonlinearity
    mu_max: Optional[float] = None
    mu_components: Optional[dict] = None

    @property
    def slipped_cycles_bound(self) -> int:
        return self.k - 1

    def revalidate(self) -> bool:
        fdi = verify_fdi(self.tf, self.params, self.nl.alpha1, self.nl.alpha2)
        if not fdi.certified:
            return False
        if self.theorem == "T1":
            rc = r_coefficients(self.nl, self.params, self.q_used)
            return all(4.0 * self.params.delta > self.params.theta ** 2 * r1 ** 2
                       for r1 in rc.r1)
        rc = r_coefficients(self.nl, self.params, self.q_used)
        return all(is_positive_definite(t_matrix(self.params, rj, r0j))
                   for rj, r0j in zip(rc.r, rc.r0))

    def report(self) -> str:
        lines = [
            f"certificate: slips fewer than {self.k} cycles (r0 = {self.slipped_cycles_bound})",
            f"criterion = {self.theorem}",
            f"k = {self.k}",
            f"theta = {self.params.theta:.12g}",
            f"eps = {self.params.eps:.12g}",
            f"delta = {self.params.delta:.12g}",
            f"tau = {self.params.tau:.12g}",
            f"a = {self.params.a:.12g}",
            f"q_used = {self.q_used:.12g} ({self.q_provenance})",
            f"fdi: min {self.fdi.min_value:.12g} at omega = {self.fdi.argmin:.12g}, "
            f"cutoff omega0 = {self.fdi.tail.omega0:.12g}",
        ]
        if self.mu_max is not None:
            lines.append(f"mu_max = {self.mu_max:.12g}")
        for key, val in sorted(self.diagnostics.items()):
            lines.append(f"{key} = {val:.12g}" if isinstance(val, float) else f"{key} = {val}")
        return "\n".join(lines)

    def record(self) -> str:
        """Machine-readable key = value lines, every witness at full precision."""
        rows = {
            "k": self.k,
            "r0": self.slipped_cycles_bound,
            "theorem": self.theorem,
            "theta": repr(self.params.theta),
            "eps": repr(self.params.eps),
            "delta": repr(self.params.delta),
            "tau": repr(self.params.tau),
            "a": repr(self.params.a),
            "q_used": repr(self.q_used),
            "q_provenance": self.q_provenance,
            "fdi_min": repr(self.fdi.min_value),
            "fdi_argmin": repr(self.fdi.argmin),
            "fdi_omega0": repr(self.fdi.tail.omega0),
            "mu_max": repr(self.mu_max) if self.mu_max is not None else "none",
        }
        for key, val in sorted(self.diagnostics.items()):
            rows[f"diag_{key}"] = repr(val) if isinstance(val, float) else str(val)
        return "\n".join(f"{k} = {v}" for k, v in rows.items())


def _require_symmetric_slopes(nl: PeriodicNonlinearity) -> float:
    if abs(abs(nl.alpha1) - nl.alpha2) > 1e-12 * max(1.0, nl.alpha2):
        raise DomainError(
            f"symmetric slope bounds required (|alpha1| == alpha2), "
            f"got alpha1={nl.alpha1}, alpha2={nl.alpha2}")
    return nl.alpha2


def _require_zero_start(nl: PeriodicNonlinearity, sigma0: Optional[float],
                        attested: bool) -> None:
    if sigma0 is not None:
        resid = abs(float(nl.value(sigma0)))
        if resid > 1e-12:
            raise DomainError(f"initial state must sit at a root of phi: |phi(sigma0)| = {resid:g}")
    elif not attested:
        raise DomainError("caller must supply sigma0 or attest phi(sigma(0)) = 0")


def certify_scalar(tf: TransferFunction, nl: PeriodicNonlinearity,
                   params: CertificateParams, energy_bound: float) -> Optional[SlipCertificate]:
    """Criterion T1: frequency inequality plus 4 delta > theta^2 r_P^2, both signs.

    ``energy_bound`` is the caller-supplied bound on the trajectory
    functional (it has no explicit general form; see T3/T4 for computed
    bounds).
    """
    fdi = verify_fdi(tf, params, nl.alpha1, nl.alpha2)
    if not fdi.certified:
        log.debug("T1: frequency inequality failed, min %g at omega %g",
                  fdi.min_value, fdi.argmin)
        return None
    rc = r_coefficients(nl, params, energy_bound)
    margins = {f"scalar_margin_j{j + 1}": 4.0 * params.delta - params.theta ** 2 * r1 ** 2
               for j, r1 in enumerate(rc.r1)}
    if not all(v > 0.0 for v in margins.values()):
        log.debug("T1: scalar condition failed: %s", margins)
        return None
    return SlipCertificate(k=params.k, theorem="T1", params=params,
                           q_used=energy_bound, q_provenance="caller",
                           fdi=fdi, diagnostics=margins, tf=tf, nl=nl)


def _matrix_certificate(tf: TransferFunction, nl: PeriodicNonlinearity,
                        params: CertificateParams, x: float, provenance: str,
                        theorem: str) -> Optional[SlipCertificate]:
    fdi = verify_fdi(tf, params, nl.alpha1, nl.alpha2)
    if not fdi.certified:
        log.debug("%s: frequency inequality failed, min %g at omega %g",
                  theorem, fdi.min_value, fdi.argmin)
        return None
    rc = r_coefficients(nl, params, x)
    diagnostics = {}
    ok = True
    for j, (rj, r0j) in enumerate(zip(rc.r, rc.r0)):
        m = t_matrix(params, rj, r0j)
        pd = is_positive_definite(m)
        d1, d2, d3 = _minor_values(m)
        diagnostics[f"minor1_j{j + 1}"] = d1
        diagnostics[f"minor2_j{j + 1}"] = d2
        diagnostics[f"minor3_j{j + 1}"] = d3
        ok = ok and pd
    if not ok:
        log.debug("%s: matrices not positive definite: %s", theorem, diagnostics)
        return None
    return SlipCertificate(k=params.k, theorem=theorem, params=params,
                           q_used=x, q_provenance=provenance,
                           fdi=fdi, diagnostics=diagnostics, tf=tf, nl=nl)


def certify_matrix(tf: TransferFunction, nl: PeriodicNonlinearity,
                   params: CertificateParams, energy_bound: float) -> Optional[SlipCertificate]:
    """Criterion T2: frequency inequality plus positive definite pair of matrices."""
    return _matrix_certificate(tf, nl, params, energy_bound, "caller", "T2")


def certify_matrix_explicit(tf: TransferFunction, nl: PeriodicNonlinearity,
                            params: CertificateParams, q: float,
                            q_provenance: str = "explicit",
                            sigma0: Optional[float] = None,
                            attest_zero_start: bool = False) -> Optional[SlipCertificate]:
    """Criterion T3: T2's matrices with the explicit bound q.

    Requires symmetric slope bounds and a start at a root of phi; the start
    constraint is enforced against a supplied sigma0 (|phi(sigma0)| <= 1e-12)
    or attested by the caller.
    """
    _require_symmetric_slopes(nl)
    _require_zero_start(nl, sigma0, attest_zero_start)
    return _matrix_certificate(tf, nl, params, q, q_provenance, "T3")


def certify_perturbed(spec: SystemSpec, params: CertificateParams, mu_tilde: float,
                      delta_bar: Optional[float] = None) -> Optional[SlipCertificate]:
    """Criterion T4: the T3 conditions at the limit bound q0, valid for small mu.

    On success, ``mu_max`` is a constructive under-estimate of the validity
    threshold: the minimum of (i) the largest mu for which the matrices stay
    positive definite at the mu-dependent bound (sampled grid plus
    bisection) and (ii) the frequency threshold for delta_bar < delta
    (default delta/2).  Solutions of the perturbed loop with mu strictly
    below mu_max slip fewer than k cycles.
    """
    nl = spec.nonlinearity
    ae = _require_symmetric_slopes(nl)
    _require_zero_start(nl, spec.sigma0, attested=False)
    if mu_tilde <= 0.0:
        raise DomainError(f"mu_tilde must be > 0, got {mu_tilde}")
    tf = TransferFunction.from_system(spec)
    M, r = spec.envelope.M, spec.envelope.r
    q0_val = bounds_mod.q0(params.theta, params.eps, params.tau,
                           M, r, nl.m, spec.rho, spec.h)
    cert = _matrix_certificate(tf, nl, params, q0_val, "q0(envelope)", "T4")
    if cert is None:
        return None

    ints = cert.diagnostics  # keep matrix minors; extend with mu data below

    def pd_at(mu: float) -> bool:
        qm = bounds_mod.q_mu(params.theta, params.eps, params.tau,
                             M, r, nl.m, spec.rho, spec.h, mu, spec.sigma_dot0)
        if qm < 0.0:
            return False  # bound formula left its meaningful region
        rc = r_coefficients(nl, params, qm)
        return all(is_positive_definite(t_matrix(params, rj, r0j))
                   for rj, r0j in zip(rc.r, rc.r0))

    cap = min(mu_tilde, 0.5 / r)
    grid = np.linspace(cap / 64.0, cap, 64)
    mu_hat = 0.0
    first_fail = None
    for g in grid:
        if pd_at(float(g)):
            mu_hat = float(g)
        else:
            first_fail = float(g)
            break
    if first_fail is not None:
        lo, hi = mu_hat, first_fail
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if pd_at(mid):
                lo = mid
            else:
                hi = mid
        mu_hat = lo

    d_bar = delta_bar if delta_bar is not None else 0.5 * params.delta
    thresh = mu_threshold(tf, params, ae, d_bar, mu_tilde)
    mu_max = min(mu_hat, thresh.mu_bar)
    components = {
        "mu_hat_matrices": mu_hat,
        "mu_bar_frequency": thresh.mu_bar,
        "delta_bar": d_bar,
        "delta1": thresh.delta1,
        "L1": thresh.L1,
    }
    return SlipCertificate(k=params.k, theorem="T4", params=params,
                           q_used=q0_val, q_provenance="q0(envelope)",
                           fdi=cert.fdi, diagnostics=dict(ints), tf=tf, nl=nl,
                           mu_max=mu_max, mu_components=components)
