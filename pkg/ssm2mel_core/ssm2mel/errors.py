"""
Exception hierarchy for ssm2mel.

Every error carries the process exit code the CLI reports for it, so library
code only has to raise and `cli.main` only has to translate.
"""

from typing import Sequence, Tuple


class SSM2MelError(Exception):
    """Base exception for ssm2mel errors."""
    exit_code = 1


class SelfTestFailure(SSM2MelError):
    exit_code = 1


class ConfigError(SSM2MelError):
    """Unknown key, unparsable value or structurally invalid configuration."""
    exit_code = 2


class DataIOError(SSM2MelError):
    """Filesystem failure or malformed TensorFile."""
    exit_code = 3
    code = "io"


class BadMagicError(DataIOError):
    code = "bad_magic"


class UnsupportedVersionError(DataIOError):
    code = "bad_version"


class UnknownDtypeError(DataIOError):
    code = "unknown_dtype"


class TruncatedPayloadError(DataIOError):
    code = "truncated"


class NumericalError(SSM2MelError):
    exit_code = 4


class NonFiniteError(NumericalError):
    """An op produced NaN or Inf while debug checks were enabled."""

    def __init__(self, op: str):
        super().__init__(f"{op}: produced non-finite values")
        self.op = op


class NonFiniteGradientError(NumericalError):
    def __init__(self, path: str):
        super().__init__(f"non-finite gradient for parameter '{path}'")
        self.path = path


class TrainingAborted(NumericalError):
    pass


class ShapeError(SSM2MelError):
    """Shapes of an op's inputs disagree."""
    exit_code = 5

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes: Tuple[Tuple[int, ...], ...] = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(list(s)) for s in self.shapes)
        message = f"{op}: shape mismatch {rendered}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class DataShapeError(SSM2MelError):
    """Dataset, checkpoint or split does not fit the requested operation."""
    exit_code = 5


class UnknownSubjectError(SSM2MelError):
    exit_code = 5

    def __init__(self, subject_id: int, n_subjects: int):
        super().__init__(f"unknown subject id {subject_id} (model has {n_subjects} subjects)")
        self.subject_id = subject_id


class InvalidValueError(SSM2MelError, ValueError):
    """An argument is outside its valid domain (e.g. a non-positive step size)."""
    exit_code = 2
