"""Exception hierarchy; each class maps to one CLI exit code."""


class HarnessError(Exception):
    exit_code = 1


class ConfigError(HarnessError, ValueError):
    """Invalid experiment, model, plan or metric configuration."""

    exit_code = 2


class DataError(HarnessError, ValueError):
    """Malformed or unusable input data."""

    exit_code = 3


class TrainingDivergedError(HarnessError, RuntimeError):
    """SGD produced a non-finite loss."""

    exit_code = 4

    def __init__(self, epoch: int, loss: float) -> None:
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss
