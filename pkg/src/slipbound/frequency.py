"""Transfer-function evaluation and the multiplier frequency-domain check.

The certification pipeline needs, for all omega >= 0,

    Re{ theta*K(iw) - tau*(K(iw) + iw/alpha1)^* (K(iw) + iw/alpha2) }
        - eps*|K(iw)|^2 - delta  >=  0.

For symmetric slope bounds |alpha1| = alpha2 = ae this reduces to

    Pi(w) = tau*w^2/ae^2 + theta*Re K(iw) - (eps+tau)*|K(iw)|^2 - delta.

Verification is numerical but one-sided by design: a finite scan with
refinement and minimum polishing establishes the inequality on [0, Omega0],
and an analytic kernel bound establishes it on (Omega0, inf).  Borderline
scans (any polished value below zero, even by roundoff) report uncertified;
false positives are worse than false negatives here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np
from scipy.ndimage import maximum_filter1d

from .errors import CertificationError, DomainError
from .model import ExponentialSum, ExpTerm, SystemSpec

if TYPE_CHECKING:  # pragma: no cover
    from .certificates import CertificateParams


# ---------------------------------------------------------------------------
# transfer functions


@dataclass(frozen=True)
class TransferFunction:
    """K(p) = -rho e^{-hp} + Laplace{gamma}(p) for an exponential-sum kernel.

    ``pll`` optionally tags the loop-filter closed form (T, s) for
    cross-checks; evaluation always goes through the kernel representation.
    """

    rho: float
    h: float
    kernel: ExponentialSum
    pll: Optional[tuple[float, float]] = None

    @classmethod
    def from_system(cls, spec: SystemSpec) -> "TransferFunction":
        return cls(rho=spec.rho, h=spec.h, kernel=spec.kernel)

    @classmethod
    def from_pll(cls, T: float, s: float, h: float) -> "TransferFunction":
        kernel = ExponentialSum((ExpTerm(coeff=1.0 - s, rate=1.0 / T, onset=h),))
        return cls(rho=-s * T, h=h, kernel=kernel, pll=(T, s))

    def eval(self, omega):
        w = np.asarray(omega, dtype=float)
        p = 1j * w
        val = -self.rho * np.exp(-1j * self.h * w) + self.kernel.laplace(p)
        if w.ndim == 0:
            return complex(val)
        return val

    def abs_bound(self, omega: float = 0.0) -> float:
        """|K(i w')| <= this for every w' with |w'| >= omega (kernel modulus bound)."""
        return abs(self.rho) + self.kernel.abs_laplace_bound(omega)


def eval_k(tf: TransferFunction, omega):
    """K(i omega) through the kernel representation."""
    return tf.eval(omega)


def eval_k_mu(tf: TransferFunction, omega, mu: float):
    """K_mu(i omega) = K(i omega) / (1 + i mu omega)."""
    if mu <= 0.0:
        raise DomainError(f"mu must be > 0, got {mu}")
    w = np.asarray(omega, dtype=float)
    val = tf.eval(omega) / (1.0 + 1j * mu * w)
    if w.ndim == 0:
        return complex(val)
    return val


def pll_closed_form(T: float, s: float, h: float, omega):
    """Loop-filter transfer function T (T s p + 1)/(T p + 1) e^{-ph} at p = i omega."""
    w = np.asarray(omega, dtype=float)
    p = 1j * w
    val = T * (T * s * p + 1.0) / (T * p + 1.0) * np.exp(-p * h)
    if w.ndim == 0:
        return complex(val)
    return val


# ---------------------------------------------------------------------------
# multiplier values


def popov_value(tf: TransferFunction, params: "CertificateParams",
                alpha1: float, alpha2: float, omega):
    """Left-hand side of the frequency-domain inequality at omega.

    Evaluated literally through complex arithmetic; for |alpha1| = alpha2
    this agrees with :func:`popov_value_symmetric` to roundoff.
    """
    w = np.asarray(omega, dtype=float)
    K = tf.eval(omega)
    cross = np.conj(K + 1j * w / alpha1) * (K + 1j * w / alpha2)
    val = np.real(params.theta * K - params.tau * cross) \
        - params.eps * np.abs(K) ** 2 - params.delta
    if w.ndim == 0:
        return float(val)
    return val


def popov_value_symmetric(tf: TransferFunction, params: "CertificateParams",
                          ae: float, omega):
    """Pi(w) = tau w^2/ae^2 + theta Re K - (eps+tau)|K|^2 - delta  (|alpha1| = alpha2 = ae)."""
    w = np.asarray(omega, dtype=float)
    K = tf.eval(omega)
    val = params.tau * (w / ae) ** 2 + params.theta * np.real(K) \
        - (params.eps + params.tau) * np.abs(K) ** 2 - params.delta
    if w.ndim == 0:
        return float(val)
    return val


def popov_value_mu(tf: TransferFunction, params: "CertificateParams",
                   ae: float, omega, mu: float):
    """Pi_mu(w): the symmetric form evaluated on K_mu = K/(1 + i mu w)."""
    w = np.asarray(omega, dtype=float)
    Kmu = eval_k_mu(tf, omega, mu)
    val = params.tau * (w / ae) ** 2 + params.theta * np.real(Kmu) \
        - (params.eps + params.tau) * np.abs(Kmu) ** 2 - params.delta
    if w.ndim == 0:
        return float(val)
    return val


# ---------------------------------------------------------------------------
# scan machinery


@dataclass(frozen=True)
class GridSpec:
    n_linear: int
    n_log: int
    points_final: int
    refine_rounds: int
    resolved: bool = True   # base spacing fine enough for the field's structure


@dataclass(frozen=True)
class TailRecord:
    """Why the inequality holds beyond the scan cutoff.

    kind "kernel-bound": tau w^2/(|a1| a2) dominates a quadratic minorant
    c2 w^2 - c1 w - c0 built from |K| <= k_bound, nonnegative for
    w >= omega_required; omega0 is the smallest power-of-two multiple of
    base_omega at or beyond that root.  kind "polynomial": the quartic
    leading coefficient is nonnegative and the vertex lies inside the scan.
    """

    kind: str
    base_omega: float
    omega_required: float
    omega0: float
    doublings: int
    k_bound: float
    margin_at_cutoff: float


@dataclass(frozen=True)
class FrequencyCheckResult:
    certified: bool
    min_value: float
    argmin: float
    grid: GridSpec
    tail: TailRecord
    delta1: float   # infimum of the scanned function over [0, omega0]


def _golden_min(f: Callable[[float], float], a: float, b: float,
                iters: int = 72) -> tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if b - a <= 1e-14 * max(1.0, abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    if fc <= fd:
        return c, fc
    return d, fd


def _structure_spacing(tf: TransferFunction) -> float:
    """Grid spacing that resolves every scale K(i w) varies on.

    Lorentzian widths come from the kernel rates, oscillation periods from
    the delays (2 pi / h and 2 pi / onset); one eighth of the finest scale.
    """
    scales = [term.rate for term in tf.kernel.terms]
    if tf.h > 0.0:
        scales.append(2.0 * math.pi / tf.h)
    for term in tf.kernel.terms:
        if term.onset > 0.0:
            scales.append(2.0 * math.pi / term.onset)
    if not scales:
        return math.inf  # constant K: any grid resolves it
    return min(scales) / 8.0


def _scan_minimum(f, omega_max: float, spacing: float = math.inf,
                  n_linear: int = 1024, n_log: int = 1024,
                  rounds: int = 8, small_frac: float = 1e-3,
                  max_points: int = 20000) -> tuple[float, float, GridSpec]:
    """Minimum of a smooth scalar field on [0, omega_max].

    Starts from merged linear + log grids (the linear grid densified until
    its spacing resolves ``spacing``, within the point budget), bisects
    intervals that bracket a sign change or whose values are small relative
    to the local scale, then polishes every discrete local minimum by golden
    section.  ``resolved`` goes false when the budget cannot reach the
    requested spacing; callers must then refuse to certify.
    """
    resolved = True
    if math.isfinite(spacing) and spacing > 0.0:
        needed = int(math.ceil(omega_max / spacing)) + 1
        if needed > max_points:
            resolved = False
            n_linear = max_points
        else:
            n_linear = max(n_linear, needed)
    om = np.unique(np.concatenate([
        np.linspace(0.0, omega_max, n_linear),
        np.geomspace(omega_max * 1e-6, omega_max, n_log),
    ]))
    vals = np.asarray(f(om), dtype=float)
    used_rounds = 0
    for _ in range(rounds):
        if om.size >= max_points:
            break
        local_scale = maximum_filter1d(np.abs(vals), size=33, mode="nearest")
        local_scale = np.maximum(local_scale, 1e-12 * np.max(np.abs(vals), initial=1e-300))
        pair_scale = np.maximum(local_scale[:-1], local_scale[1:])
        v0, v1 = vals[:-1], vals[1:]
        need = (np.sign(v0) != np.sign(v1)) | (np.minimum(v0, v1) < small_frac * pair_scale)
        if not np.any(need):
            break
        mids = 0.5 * (om[:-1][need] + om[1:][need])
        mvals = np.asarray(f(mids), dtype=float)
        order = np.argsort(np.concatenate([om, mids]), kind="mergesort")
        allv = np.concatenate([vals, mvals])[order]
        om = np.concatenate([om, mids])[order]
        vals = allv
        used_rounds += 1

    i_min = int(np.argmin(vals))
    best_x, best_v = float(om[i_min]), float(vals[i_min])

    fs = lambda x: float(f(x))
    interior = (vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:])
    for i in np.nonzero(interior)[0] + 1:
        x, v = _golden_min(fs, float(om[i - 1]), float(om[i + 1]))
        if v < best_v:
            best_v, best_x = v, x
    # endpoints are minima candidates too
    for i in (0, om.size - 1):
        if vals[i] < best_v:
            best_v, best_x = float(vals[i]), float(om[i])

    grid = GridSpec(n_linear=n_linear, n_log=n_log, points_final=int(om.size),
                    refine_rounds=used_rounds, resolved=resolved)
    return best_v, best_x, grid


def _tail_cutoff(tf: TransferFunction, theta: float, eps_plus_tau: float,
                 tau: float, delta_eff: float, alpha1: float, alpha2: float,
                 base_omega: float, mu_tilde: float = 0.0) -> TailRecord:
    """Power-of-two multiple of base_omega beyond which the w^2 term dominates.

    Uses |K(iw)| <= B := |rho| + sum |c_i|/rate_i and, for the terms linear in
    w, w|K(iw)| <= w|rho| + sum |c_i|.  The resulting quadratic minorant
    c2 w^2 - c1 w - c0 of the checked field is nonnegative from its positive
    root onward.
    """
    B = tf.abs_bound(0.0)
    coeff_sum = sum(abs(t.coeff) for t in tf.kernel.terms)
    s1 = abs(1.0 / alpha1 + 1.0 / alpha2)
    c2 = tau / (abs(alpha1) * alpha2)
    c1 = tau * s1 * abs(tf.rho) + theta * mu_tilde * abs(tf.rho)
    c0 = theta * B + eps_plus_tau * B * B + delta_eff \
        + tau * s1 * coeff_sum + theta * mu_tilde * coeff_sum
    omega_required = (c1 + math.sqrt(c1 * c1 + 4.0 * c2 * c0)) / (2.0 * c2)

    doublings = 0
    omega0 = base_omega
    while omega0 < omega_required and doublings < 200:
        omega0 *= 2.0
        doublings += 1
    margin = c2 * omega0 * omega0 - c1 * omega0 - c0
    return TailRecord(kind="kernel-bound", base_omega=base_omega,
                      omega_required=omega_required, omega0=omega0,
                      doublings=doublings, k_bound=B, margin_at_cutoff=margin)


def verify_fdi(tf: TransferFunction, params: "CertificateParams",
               alpha1: float, alpha2: float) -> FrequencyCheckResult:
    """Certify the frequency-domain inequality for all omega >= 0.

    Certification requires every scanned and polished value on [0, Omega0]
    to be >= 0 exactly (no tolerance slack) together with the analytic tail
    bound beyond Omega0, and the scan must have resolved the transfer
    function's structure scales (otherwise certified stays false even if no
    sampled value is negative).  Failures return diagnostics, never raise.
    """
    base = math.sqrt(params.delta * abs(alpha1) * alpha2 / params.tau)
    tail = _tail_cutoff(tf, params.theta, params.eps + params.tau, params.tau,
                        params.delta, alpha1, alpha2, base_omega=base)

    def field(w):
        return popov_value(tf, params, alpha1, alpha2, w)

    min_value, argmin, grid = _scan_minimum(field, tail.omega0,
                                            spacing=_structure_spacing(tf))
    certified = bool(min_value >= 0.0 and tail.margin_at_cutoff >= 0.0
                     and grid.resolved)
    return FrequencyCheckResult(certified=certified, min_value=min_value,
                                argmin=argmin, grid=grid, tail=tail,
                                delta1=min_value)


# ---------------------------------------------------------------------------
# PLL quartic form and its polynomial minorant


def pll_omega(omega, T: float, s: float, h: float,
              eps: float, delta: float, tau: float):
    """The PLL inequality cleared of its |1 + i T w|^2 denominator (theta = 1, ae = 1).

    Equals popov_value_symmetric times (1 + T^2 w^2) for the PLL transfer
    function.
    """
    w = np.asarray(omega, dtype=float)
    val = (tau * T ** 2 * w ** 4
           + w ** 2 * (T ** 3 * s * np.cos(w * h) - T ** 4 * s ** 2 * (eps + tau)
                       + tau - delta * T ** 2)
           - T ** 2 * (1.0 - s) * w * np.sin(w * h)
           + T * np.cos(w * h) - (eps + tau) * T ** 2 - delta)
    if w.ndim == 0:
        return float(val)
    return val


def minorant_coefficients(T: float, s: float, h: float,
                          eps: float, delta: float, tau: float) -> tuple[float, float, float]:
    """(A, B, C) with pll_omega(w) >= A w^4 + B w^2 + C for all real w.

    From cos(x) >= 1 - x^2/2 and sin(x) <= x on the delay terms.
    """
    A = tau * T ** 2 - 0.5 * T ** 3 * s * h ** 2
    B = (T ** 3 * s - T ** 4 * s ** 2 * (eps + tau) + tau - delta * T ** 2
         - 0.5 * T * h ** 2 - (1.0 - s) * T ** 2 * h)
    C = T - (eps + tau) * T ** 2 - delta
    return A, B, C


def pll_omega_minorant(omega, T: float, s: float, h: float,
                       eps: float, delta: float, tau: float):
    A, B, C = minorant_coefficients(T, s, h, eps, delta, tau)
    w = np.asarray(omega, dtype=float)
    val = A * w ** 4 + B * w ** 2 + C
    if w.ndim == 0:
        return float(val)
    return val


def verify_pll_minorant(T: float, s: float, h: float,
                        eps: float, delta: float, tau: float) -> FrequencyCheckResult:
    """Exact nonnegativity test for the quartic minorant A w^4 + B w^2 + C.

    As a quadratic in u = w^2 >= 0 the test is exact on the computed
    coefficients: A >= 0, C >= 0 and (B >= 0 or B^2 <= 4 A C).  The reported
    minimum and argmin come from the vertex, not a scan.
    """
    A, B, C = minorant_coefficients(T, s, h, eps, delta, tau)
    ok = A >= 0.0 and C >= 0.0 and (B >= 0.0 or B * B <= 4.0 * A * C)
    if B >= 0.0 or A <= 0.0:
        min_value, argmin = C, 0.0
    else:
        u_star = -B / (2.0 * A)
        min_value, argmin = C - B * B / (4.0 * A), math.sqrt(u_star)
    u_vertex = max(1.0, -B / (2.0 * A)) if A > 0.0 else 1.0
    tail = TailRecord(kind="polynomial", base_omega=math.sqrt(u_vertex),
                      omega_required=math.sqrt(u_vertex), omega0=math.sqrt(u_vertex),
                      doublings=0, k_bound=0.0, margin_at_cutoff=A)
    grid = GridSpec(n_linear=0, n_log=0, points_final=0, refine_rounds=0)
    return FrequencyCheckResult(certified=bool(ok), min_value=float(min_value),
                                argmin=float(argmin), grid=grid, tail=tail,
                                delta1=float(min_value))


# ---------------------------------------------------------------------------
# small-parameter threshold


@dataclass(frozen=True)
class MuThreshold:
    """Validity threshold for the perturbed frequency inequality.

    The inequality holds for mu strictly below ``mu_bar`` (callers must stay
    strictly below; the threshold itself is not included).
    """

    mu_bar: float
    delta1: float
    L1: float
    omega0: float
    cap_ratio: float          # delta1 / L1
    cap_sqrt: float           # sqrt(2 delta1 tau / (ae^2 delta_bar))
    mu_tilde: float
    verified_shrunk: bool     # True if the sampled re-check forced a reduction


def mu_threshold(tf: TransferFunction, params: "CertificateParams", ae: float,
                 delta_bar: float, mu_tilde: float) -> MuThreshold:
    """Threshold mu_bar = min{delta1/L1, sqrt(2 delta1 tau/(ae^2 delta_bar)), mu_tilde}.

    Requires the strict inequality with delta replaced by delta_bar < delta:
    its scanned infimum delta1 over [0, Omega0] must be positive, where
    Omega0 extends the cutoff so the tail argument also absorbs the
    theta*mu*w*Im K and -delta_bar*mu^2*w^2 perturbation terms for
    mu <= mu_tilde.  L1 is twice the scanned supremum of |theta w Im K|.
    The returned value is re-checked on a sampled (mu, omega) sheet and
    shrunk if any sample dips below zero, so it is a sound under-estimate.
    """
    if not (0.0 < delta_bar < params.delta):
        raise DomainError(f"delta_bar must lie in (0, delta), got {delta_bar}")
    if mu_tilde <= 0.0:
        raise DomainError(f"mu_tilde must be > 0, got {mu_tilde}")

    params_bar = replace(params, delta=delta_bar)
    base = ae * math.sqrt(delta_bar / params.tau)
    tail = _tail_cutoff(tf, params.theta, params.eps + params.tau, params.tau,
                        delta_bar, -ae, ae, base_omega=base, mu_tilde=mu_tilde)
    spacing = _structure_spacing(tf)

    def field_bar(w):
        return popov_value_symmetric(tf, params_bar, ae, w)

    delta1, arg1, grid = _scan_minimum(field_bar, tail.omega0, spacing=spacing)
    if delta1 <= 0.0 or tail.margin_at_cutoff < 0.0 or not grid.resolved:
        raise CertificationError(
            f"strict frequency inequality fails: inf over [0, {tail.omega0:g}] "
            f"is {delta1:g} at omega = {arg1:g}"
            + ("" if grid.resolved else " (scan resolution budget exceeded)"))

    def neg_im_weight(w):
        w = np.asarray(w, dtype=float)
        return -np.abs(params.theta * w * np.imag(tf.eval(w)))

    neg_sup, _, _ = _scan_minimum(neg_im_weight, tail.omega0, spacing=spacing)
    L1 = 2.0 * (-neg_sup)

    cap_ratio = delta1 / L1 if L1 > 0.0 else math.inf
    cap_sqrt = math.sqrt(2.0 * delta1 * params.tau / (ae * ae * delta_bar))
    mu_bar = min(cap_ratio, cap_sqrt, mu_tilde)

    # sampled soundness re-check; shrink on any negative perturbed value
    omegas = np.linspace(0.0, tail.omega0, 4096)
    shrunk = False
    for _ in range(60):
        mus = mu_bar * (1.0 - np.linspace(0.0, 1.0, 9)[1:] ** 2)
        worst = min(float(np.min(popov_value_mu(tf, params_bar, ae, omegas, float(m))))
                    for m in mus if m > 0.0)
        if worst >= 0.0:
            break
        mu_bar *= 0.5
        shrunk = True

    return MuThreshold(mu_bar=mu_bar, delta1=delta1, L1=L1, omega0=tail.omega0,
                       cap_ratio=cap_ratio, cap_sqrt=cap_sqrt, mu_tilde=mu_tilde,
                       verified_shrunk=shrunk)
