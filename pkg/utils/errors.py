"""
Exception hierarchy for the Mam-App pipeline
Every error carries the CLI exit code it maps to
"""
from typing import Optional, Sequence


class MamAppError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 2


class ConfigError(MamAppError):
    """Invalid configuration or run-config file"""

    def __init__(self, message: str, violations: Optional[Sequence[str]] = None):
        self.violations = list(violations or [])
        if self.violations:
            message = f"{message}: " + "; ".join(self.violations)
        super().__init__(message)


class DimensionError(MamAppError):
    """Tensor shapes do not agree"""

    def __init__(self, op: str, detail: str):
        self.op = op
        super().__init__(f"{op}: {detail}")


class GradientError(MamAppError):
    """Misuse of the gradient tape"""


class NumericError(MamAppError):
    """A non-finite value appeared in a computation"""

    exit_code = 3

    def __init__(self, message: str, op: Optional[str] = None, token_index: Optional[int] = None):
        self.op = op
        self.token_index = token_index
        super().__init__(message)


class NonFiniteLossError(NumericError):
    """Training loss became NaN or Inf"""

    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"Non-finite loss {value} at epoch {epoch}, batch {batch}", op='loss')


class LabelError(MamAppError):
    """A class label lies outside [0, K)"""

    def __init__(self, index: int, label: int, num_classes: int):
        self.index = index
        self.label = label
        super().__init__(f"Label {label} at sample {index} is outside [0, {num_classes})")


class IngestionError(MamAppError):
    """Dataset directory or image could not be ingested"""

    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")


class CheckpointError(MamAppError):
    """Checkpoint file is malformed or unreadable"""


class CheckpointShapeMismatch(CheckpointError):
    """A stored tensor does not match the shape the config requires"""

    def __init__(self, name: str, stored: Sequence[int], expected: Sequence[int]):
        self.name = name
        super().__init__(
            f"Tensor '{name}' has shape {tuple(stored)} in checkpoint but config requires {tuple(expected)}"
        )


class EvaluationError(MamAppError):
    """Metrics requested on empty or degenerate input"""
