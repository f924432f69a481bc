from typing import Any, Iterable, List, Optional, Sequence, Tuple


class ExceptionBase(Exception):
    """Base exception."""

    message: str

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class ShapeError(ExceptionBase):
    """Thrown when tensor operands do not conform for an operation."""

    def __init__(self, op: str, *shapes: Tuple[int, ...]) -> None:
        self.op = op
        self.shapes = shapes
        super().__init__(f'{op}: incompatible shapes {" and ".join(str(tuple(s)) for s in shapes)}')


class GradientError(ExceptionBase):
    """Thrown when reverse-mode differentiation is asked to do something undefined."""


class ConfigError(ExceptionBase):
    """Thrown for invalid, unknown or contradictory configuration."""


class DataError(ExceptionBase):
    """Thrown when input data is malformed, inconsistent or insufficient."""

    offenders: List[Any]

    def __init__(self, message: str, offenders: Optional[Iterable[Any]] = None) -> None:
        self.offenders = list(offenders) if offenders is not None else []
        super().__init__(message)


class FormatError(DataError):
    """Thrown when a binary file does not carry the expected header."""

    header: bytes

    def __init__(self, message: str, header: bytes) -> None:
        super().__init__(message)
        self.header = header


class NumericError(ExceptionBase):
    """Thrown when a computation produces non-finite values."""


class TrainingDiverged(NumericError):
    """Thrown when the training objective turns non-finite; carries the offending batch."""

    def __init__(self, message: str, batch_ids: Sequence[str]) -> None:
        self.batch_ids = list(batch_ids)
        super().__init__(f'{message} (batch ids: {", ".join(self.batch_ids)})')
