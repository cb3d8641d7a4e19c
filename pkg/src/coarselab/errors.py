"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of the operation."""


class NotSublinear(ValueError):
    """A candidate gauge function failed the sublinearity check.

    Carries a witness: the grid point(s) where kappa(t)/t stopped decaying.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class Inconclusive(RuntimeError):
    """A numeric scan could not settle the question within its budget.

    The ``detail`` attribute carries whatever profile the scan produced,
    so callers can report it instead of silently retrying.
    """

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class PreconditionError(ValueError):
    """A documented precondition of a tester failed; carries a witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class GenerationError(RuntimeError):
    """Probe generation exhausted its retry budget without certifying."""


class CertificationError(RuntimeError):
    """An internally-built path failed its own quasi-geodesic certificate."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
