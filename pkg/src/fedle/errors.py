"""Exception hierarchy shared by every module."""


class FedLEError(Exception):
    """Base class for all simulator errors."""


class InvalidConfigError(FedLEError, ValueError):
    pass


class ShapeError(FedLEError, ValueError):
    pass


class InvalidInputError(FedLEError, ValueError):
    pass


class FormatError(FedLEError, ValueError):
    """Malformed IDX file. ``field`` names the header entry that failed."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class PartitionInfeasibleError(FedLEError, ValueError):
    pass


class ContractViolation(FedLEError, RuntimeError):
    pass


class DegenerateVectorError(FedLEError, ValueError):
    def __init__(self, message: str, client: int):
        super().__init__(message)
        self.client = client


class InsufficientClientsError(FedLEError, RuntimeError):
    pass


class ComparisonInvalidError(FedLEError, ValueError):
    pass


class CalibrationFailedError(FedLEError, RuntimeError):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
