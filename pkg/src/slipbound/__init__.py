"""slipbound: certified upper bounds on cycle slipping in delayed loops.

Library layout mirrors the pipeline: ``model`` (systems), ``frequency``
(transfer functions and the multiplier inequality), ``bounds`` (explicit
energy constants), ``certificates`` (matrix conditions and slip
certificates), ``simulator`` (fixed-step integration and slip counting),
``search`` (minimal certified cycle count), ``cli`` (command line).
"""

from .bounds import (BoundConstants, bound_constants, energy_bound_q, pll_q,
                     q0, q_mu, tail_constants)
from .certificates import (CertificateParams, PeriodicIntegrals, RCoefficients,
                           SlipCertificate, certify_matrix,
                           certify_matrix_explicit, certify_perturbed,
                           certify_scalar, is_positive_definite, p_factor,
                           periodic_integrals, phi_factor, r_coefficients,
                           t_matrix)
from .errors import (CertificationError, ConfigError, DomainError,
                     NoCertificateError, QuadratureError, SimulationError,
                     SlipboundError)
from .frequency import (FrequencyCheckResult, MuThreshold, TransferFunction,
                        eval_k, eval_k_mu, mu_threshold, pll_closed_form,
                        pll_omega, pll_omega_minorant, popov_value,
                        popov_value_mu, popov_value_symmetric, verify_fdi,
                        verify_pll_minorant)
from .model import (DecayEnvelope, ExponentialSum, ExpTerm, History,
                    PeriodicNonlinearity, PllSpec, SystemSpec,
                    nonlinearity_from_callables, perturbed_forcing,
                    perturbed_kernel, pll_spec, pll_to_volterra,
                    sine_nonlinearity)
from .search import MuSweepRow, min_certified_k, mu_sweep, pll_recipe
from .simulator import (SlipCount, Trajectory, count_slipped_cycles,
                        default_dt, detect_convergence, integrate)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
