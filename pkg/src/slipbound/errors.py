"""Exception hierarchy for slipbound."""


class SlipboundError(Exception):
    """Base class for all slipbound errors."""


class DomainError(SlipboundError, ValueError):
    """An input violates a documented validity region."""


class ConfigError(SlipboundError, ValueError):
    """A configuration file is malformed or inconsistent."""


class QuadratureError(SlipboundError, RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class SimulationError(SlipboundError, RuntimeError):
    """Numerical integration aborted (blow-up or precondition violation)."""


class CertificationError(SlipboundError, RuntimeError):
    """A certification prerequisite could not be established."""


class NoCertificateError(SlipboundError, RuntimeError):
    """No certificate was found within the search budget.

    Carries the best near-miss diagnostics collected during the search.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
