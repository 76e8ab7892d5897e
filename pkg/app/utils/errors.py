"""Exception hierarchy shared by every module.

Each error carries the process exit code the CLI reports for it.
"""


class SimplError(Exception):
    """Base class for all forecasting engine errors"""

    exit_code: int = 1


class ContractViolation(SimplError, ValueError):
    """Input or call contract was not met"""

    exit_code = 2


class MalformedSceneError(ContractViolation):
    """Scene content breaks a Scene/AgentTrack/MapPolyline invariant"""


class ConfigurationError(ContractViolation):
    """Invalid model, training or generator configuration"""


class DomainError(ContractViolation):
    """Argument outside the mathematical domain of an operation"""


class ShapeError(ContractViolation):
    """Tensor extents do not match"""


class NumericFailure(SimplError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable numbers"""

    exit_code = 3


class FittingError(NumericFailure):
    """Least-squares system is rank deficient"""


class StorageError(SimplError, OSError):
    """Missing, unreadable or corrupt file"""

    exit_code = 4
