"""Exception and warning classes raised across the package."""


class SdaeVarError(Exception):
    """Base class for all errors raised by sdaevar."""


class SingularMatrix(SdaeVarError):
    pass


class NoConvergence(SdaeVarError):
    pass


class IllConditioned(UserWarning):
    """Emitted when a reciprocal condition estimate falls below 1e-12."""


class NotHurwitz(SdaeVarError):
    """The state matrix has eigenvalues with non-negative real part.

    The offending eigenvalues are kept on ``eigenvalues``.
    """

    def __init__(self, message, eigenvalues=()):
        super().__init__(message)
        self.eigenvalues = list(eigenvalues)


class InvalidParameter(SdaeVarError, ValueError):
    pass


class DomainError(SdaeVarError, ValueError):
    pass


class ModelError(SdaeVarError, ValueError):
    """Malformed or inconsistent system description."""


class InitializationInfeasible(SdaeVarError):
    pass


class SingularGy(SingularMatrix):
    """The algebraic Jacobian is singular, i.e. the DAE is not index-1."""


class DegenerateCovariance(SdaeVarError):
    pass


class NewtonDivergence(SdaeVarError):
    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class MismatchedVariables(SdaeVarError, ValueError):
    pass


class EmptyInput(SdaeVarError, ValueError):
    pass


class EnsembleFailure(SdaeVarError):
    """Too many Monte Carlo realizations failed."""
