"""Exception hierarchy shared by every ergodica module."""


class ErgodicaError(Exception):
    """Base class for all library errors."""


class BadParameter(ErgodicaError, ValueError):
    pass


class BadIndex(ErgodicaError, ValueError):
    pass


class NonFiniteState(ErgodicaError, FloatingPointError):
    """A simulated state contained NaN or Inf.

    ``index`` is the step (or atom) at which the failure was first seen.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NotInvertible(ErgodicaError):
    pass


class InconsistentData(ErgodicaError):
    pass


class MissingGradient(ErgodicaError):
    pass


class TooManyAtoms(ErgodicaError, ValueError):
    pass


class NoConvergence(ErgodicaError, ArithmeticError):
    pass


class RateNotGeometric(ErgodicaError, ArithmeticError):
    pass


class SingularJacobian(ErgodicaError, ArithmeticError):
    pass


class ZeroLikelihood(ErgodicaError, ArithmeticError):
    pass


class NonStationaryInit(ErgodicaError, ValueError):
    pass


class ParticleCollapse(ErgodicaError, ArithmeticError):
    pass


class ConfigError(ErgodicaError, ValueError):
    """Invalid experiment configuration; ``field`` is a dotted path."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
