"""Exception hierarchy shared across the package."""


class TegError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ConfigError(TegError, ValueError):
    kind = "config"


class SamplingError(TegError, ValueError):
    kind = "sampling"


class ContractError(TegError, ValueError):
    """Input violates an operation's precondition (shapes, empty inputs)."""

    kind = "contract"


class NormalizationError(ContractError):
    kind = "normalization"

    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"cannot normalize zero-norm row {row}")


class AggregationError(ContractError):
    kind = "aggregation"


class StateError(TegError, RuntimeError):
    kind = "state"


class TrainingError(TegError, RuntimeError):
    kind = "training"

    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"step {step}: {message}")


class ProbeError(TegError, ValueError):
    kind = "probe"


class CheckpointError(TegError, ValueError):
    kind = "checkpoint"
