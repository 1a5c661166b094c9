"""Exception hierarchy shared by every module of the package."""


class PenaltyPriorError(Exception):
    """Base class for all errors raised by penalty_prior."""


class InvalidParameterError(PenaltyPriorError, ValueError):
    pass


class ConfigurationError(PenaltyPriorError, ValueError):
    pass


class UnsupportedPenaltyError(PenaltyPriorError, NotImplementedError):
    pass


class NonNormalizablePriorError(PenaltyPriorError, ArithmeticError):
    pass


class IllConditionedDeconvolutionError(PenaltyPriorError, ArithmeticError):
    def __init__(self, message, frequency=None):
        super().__init__(message)
        self.frequency = frequency


class SupportViolationError(PenaltyPriorError, ArithmeticError):
    pass


class NumericalFailureError(PenaltyPriorError, ArithmeticError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class RescalingError(PenaltyPriorError, OverflowError):
    pass


class DomainError(PenaltyPriorError, ValueError):
    pass


class DerivationError(PenaltyPriorError):
    """A derivation failed for one value of the extra posterior parameters."""

    def __init__(self, message, nu=None):
        super().__init__(message)
        self.nu = nu


class InvalidWitnessError(PenaltyPriorError, ValueError):
    pass


class HypothesisViolationError(PenaltyPriorError, ValueError):
    pass


class TrainingDivergedError(PenaltyPriorError, ArithmeticError):
    pass
