"""Exception hierarchy shared by every tljd module."""


class TljdError(Exception):
    """Base class for all errors raised by tljd."""


class ShapeError(TljdError, ValueError):
    pass


class DomainError(TljdError, ValueError):
    pass


class ConfigError(TljdError, ValueError):
    pass


class MissingStateError(TljdError, RuntimeError):
    pass


class DeterminismError(TljdError, RuntimeError):
    pass


class LoadError(TljdError, ValueError):
    pass


class ProtocolError(TljdError, ValueError):
    pass


class PartitionError(TljdError, ValueError):
    pass


class InputError(TljdError, ValueError):
    pass


class BatchError(TljdError, ValueError):
    pass


class ContractError(TljdError, ValueError):
    pass


class DivergenceError(TljdError, RuntimeError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class UndefinedMetricError(TljdError, ValueError):
    """R² is undefined for constant targets; ``report`` still carries rmse/mae."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CompatibilityError(TljdError, ValueError):
    pass


class CheckpointError(TljdError, ValueError):
    pass


class OverwriteError(TljdError, FileExistsError):
    """Refusing to replace existing output without ``--force``."""
