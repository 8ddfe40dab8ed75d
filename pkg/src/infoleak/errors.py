"""Exception hierarchy shared across the package."""


class InfoLeakError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(InfoLeakError, ValueError):
    """A numeric parameter is outside its admissible range."""


class UndefinedDensityError(InfoLeakError, ValueError):
    """Information density queried at a point with a zero marginal."""


class AlphabetTooLargeError(InfoLeakError, ValueError):
    """Exhaustive enumeration requested over an alphabet that is too large."""


class ContractViolationError(InfoLeakError, ValueError):
    """A caller-supplied function broke a documented precondition."""


class BandwidthError(InfoLeakError, ValueError):
    """Kernel bandwidth cannot be chosen (degenerate coordinate)."""


class ShapeMismatchError(InfoLeakError, ValueError):
    """Model, data or report shapes are inconsistent."""


class TrainingError(InfoLeakError, RuntimeError):
    """Training produced a non-finite objective.

    Attributes
    ----------
    checkpoint : object
        Last model state whose objective was finite (may be ``None``).
    epoch : int
        Epoch at which the failure was detected.
    """

    def __init__(self, message, checkpoint=None, epoch=-1):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch


class NumericalError(InfoLeakError, ArithmeticError):
    """An iterative numeric routine failed to converge."""


class DataFormatError(InfoLeakError, ValueError):
    """An input file is unreadable or malformed."""
