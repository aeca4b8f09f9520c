"""Explicit constants bounding the certification energy functional.

The matrix and scalar slip conditions consume an upper bound x on the
quadratic functional accumulated along trajectories.  This module computes
every explicit form of that bound:

* ``energy_bound_q``   -- from the decay envelope (M, r), for symmetric slope
  bounds and trajectories starting at a root of phi;
* ``q0``               -- the same plus delay corrections, valid as the
  vanishing-mu limit of the perturbed bound;
* ``q_mu``             -- the mu-dependent bound for the singularly perturbed
  loop, 0 < mu < 1/r;
* ``pll_q``            -- the sharp polynomial form for the PLL initialized
  with forcing amplitude K(0)*beta;
* ``tail_constants``   -- the decay rate lambda and tail constant q3 used by
  the truncation argument behind the frequency criterion.

All functions are pure; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import DomainError


def energy_bound_q(theta: float, eps: float, tau: float,
                   M: float, r: float, m: float, rho: float) -> float:
    """Envelope-based bound q = (1/r)(theta M m + 2(eps+tau) M m (M/r + rho) + (eps+tau) M^2/2)."""
    if r <= 0.0:
        raise DomainError(f"decay rate r must be > 0, got {r}")
    return (theta * M * m
            + 2.0 * (eps + tau) * M * m * (M / r + rho)
            + (eps + tau) * M * M / 2.0) / r


def q0_delay_correction(theta: float, eps: float, tau: float,
                        M: float, r: float, m: float, rho: float, h: float) -> float:
    """Delay terms added to a base bound to form its mu -> 0 limit q0."""
    if r <= 0.0:
        raise DomainError(f"decay rate r must be > 0, got {r}")
    return ((theta * m + 2.0 * (eps + tau) * m * (M / r + rho)) * rho * m * h
            + (eps + tau) * rho * rho * m * m * h)


def q0(theta: float, eps: float, tau: float,
       M: float, r: float, m: float, rho: float, h: float) -> float:
    """q plus the delay corrections; equals the mu -> 0 limit of :func:`q_mu`."""
    return energy_bound_q(theta, eps, tau, M, r, m, rho) \
        + q0_delay_correction(theta, eps, tau, M, r, m, rho, h)


def q_mu(theta: float, eps: float, tau: float,
         M: float, r: float, m: float, rho: float, h: float,
         mu: float, sigma_dot0: float) -> float:
    """The mu-dependent energy bound, valid for 0 < mu < 1/r.

    q_mu = (theta m + 2(eps+tau) m (rho + M/r)) (mu |sigma'(0)| + M/r + rho m h)
           + (eps+tau) [ (mu/2) sigma'(0)^2
                         + M^2/(2(1-r mu)^2) (mu - 4 mu/(1-r mu) + 1/r)
                         + rho^2 m^2 (h + mu e^{-h/mu} - mu) ].

    The (eps+tau) factor distributes over all three bracketed terms; this is
    the unique grouping whose mu -> 0 limit is q0.
    """
    if r <= 0.0:
        raise DomainError(f"decay rate r must be > 0, got {r}")
    if not (0.0 < mu < 1.0 / r):
        raise DomainError(f"q_mu requires 0 < mu < 1/r = {1.0 / r:g}, got {mu}")
    one_minus = 1.0 - r * mu
    first = (theta * m + 2.0 * (eps + tau) * m * (rho + M / r)) \
        * (mu * abs(sigma_dot0) + M / r + rho * m * h)
    m_term = M * M / (2.0 * one_minus ** 2) * (mu - 4.0 * mu / one_minus + 1.0 / r)
    if h > 0.0:
        boundary = mu * math.exp(-h / mu) - mu
    else:
        boundary = 0.0
    rho_term = rho * rho * m * m * (h + boundary)
    return first + (eps + tau) * (0.5 * mu * sigma_dot0 ** 2 + m_term + rho_term)


def pll_q(T: float, s: float, beta: float, h0: float) -> float:
    """Sharp bound q = T^2 (A + B h0 + C h0^2) for the PLL with b = K(0) beta.

    A = 7/2 beta^2 + 3,
    B = 3 (1-s)(1+beta)(3 beta + 1),
    C = 3/2 (1-s)^2 (1+beta)^2,
    with h0 = h/T the delay in filter time units.
    """
    A = 3.5 * beta * beta + 3.0
    B = 3.0 * (1.0 - s) * (1.0 + beta) * (3.0 * beta + 1.0)
    C = 1.5 * (1.0 - s) ** 2 * (1.0 + beta) ** 2
    return T * T * (A + B * h0 + C * h0 * h0)


def tail_constants(theta: float, eps: float, delta: float, tau: float,
                   alpha1: float, alpha2: float, m: float) -> tuple[float, float]:
    """(lambda, q3) for the exponential truncation of trajectories.

    lambda = sqrt(delta |alpha1| alpha2 / tau),
    q3     = sqrt(tau) W^2 m^2 / (8 (eps+tau) sqrt(delta |alpha1| alpha2)),
    W      = theta + sqrt(tau delta |alpha1| alpha2) (1/alpha1 + 1/alpha2),

    with m^2 standing in for max phi^2 (identical for symmetric-slope sine
    characteristics, conservative otherwise).
    """
    if tau <= 0.0 or delta <= 0.0:
        raise DomainError(f"tail constants need tau > 0 and delta > 0, got tau={tau}, delta={delta}")
    prod = delta * abs(alpha1) * alpha2
    lam = math.sqrt(prod / tau)
    W = theta + math.sqrt(tau * prod) * (1.0 / alpha1 + 1.0 / alpha2)
    q3 = math.sqrt(tau) * W * W * m * m / (8.0 * (eps + tau) * math.sqrt(prod))
    return lam, q3


@dataclass(frozen=True)
class BoundConstants:
    """All explicit bound constants for one parameter point, inputs echoed."""

    q: float
    q_mu: Optional[float]
    q0: float
    lambda_opt: float
    q3: float
    theta: float
    eps: float
    tau: float
    delta: float
    M: float
    r: float
    m: float
    rho: float
    h: float
    mu: Optional[float]
    sigma_dot0: float


def bound_constants(theta: float, eps: float, delta: float, tau: float,
                    M: float, r: float, m: float, rho: float, h: float,
                    alpha1: float, alpha2: float,
                    mu: Optional[float] = None,
                    sigma_dot0: float = 0.0) -> BoundConstants:
    """Assemble every explicit constant for reporting."""
    q = energy_bound_q(theta, eps, tau, M, r, m, rho)
    qz = q0(theta, eps, tau, M, r, m, rho, h)
    qm = q_mu(theta, eps, tau, M, r, m, rho, h, mu, sigma_dot0) if mu is not None else None
    lam, q3 = tail_constants(theta, eps, delta, tau, alpha1, alpha2, m)
    return BoundConstants(q=q, q_mu=qm, q0=qz, lambda_opt=lam, q3=q3,
                          theta=theta, eps=eps, tau=tau, delta=delta,
                          M=M, r=r, m=m, rho=rho, h=h, mu=mu,
                          sigma_dot0=sigma_dot0)
