class VqeError(Exception):
    """Base error. `category` is the machine-parsable tag printed by the CLI."""

    category = "internal"
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def __str__(self) -> str:
        return self.detail


class ShapeError(VqeError):
    category = "shape"
    exit_code = 3


class ConfigError(VqeError):
    category = "config"
    exit_code = 2


class PartitionError(VqeError):
    category = "partition"
    exit_code = 4

    def __init__(self, detail: str, line: int | None = None):
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail)
        self.line = line


class CodecError(VqeError):
    category = "codec"
    exit_code = 5


class DataError(VqeError):
    category = "data"
    exit_code = 6


class CheckpointError(VqeError):
    category = "checkpoint"
    exit_code = 7


class GradientError(VqeError):
    category = "gradient"
    exit_code = 8


class TrainingDiverged(VqeError):
    category = "diverged"
    exit_code = 9


class RdCurveError(VqeError):
    category = "rd-curve"
    exit_code = 10
