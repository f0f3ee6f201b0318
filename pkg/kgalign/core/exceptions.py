"""Exception hierarchy shared by the library and the CLI.

The CLI maps DivergenceError to exit code 2 and any other KgAlignError to
exit code 1.
"""

from pathlib import Path
from typing import Optional, Union


class KgAlignError(Exception):
    """Base class for every error raised by kgalign."""


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

class CatalogParseError(KgAlignError):
    """Raised when a TSV line cannot be parsed."""

    def __init__(self, path: Union[str, Path], line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class CatalogValidationError(KgAlignError):
    """Raised when parsed data is inconsistent (missing types, unknown seed triples)."""


class DegenerateCatalogError(KgAlignError):
    """Raised when the catalog cannot support the requested operation (nothing to corrupt, no rows)."""


class UnsupportedArityError(KgAlignError):
    def __init__(self, arity: int, operation: str):
        self.arity = arity
        self.operation = operation
        super().__init__(f"{operation} is defined for binary triples only, got arity {arity}")


class AtomParseError(KgAlignError):
    def __init__(self, text: str, reason: str):
        self.text = text
        self.reason = reason
        super().__init__(f"Cannot parse atom {text!r}: {reason}")


class UnknownSymbolError(KgAlignError):
    def __init__(self, symbol: str, kind: str, kg: Optional[str] = None):
        self.symbol = symbol
        self.kind = kind
        self.kg = kg
        where = f" in {kg}" if kg else ""
        super().__init__(f"Unknown {kind} {symbol!r}{where}")


# ---------------------------------------------------------------------------
# Parameters and checkpoints
# ---------------------------------------------------------------------------

class NonFiniteParameterError(KgAlignError):
    def __init__(self, tensor: str, row: int):
        self.tensor = tensor
        self.row = row
        super().__init__(f"Non-finite values in {tensor} row {row}")


class CheckpointError(KgAlignError):
    """Base class for checkpoint file problems."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes, unsupported version, checksum mismatch or trailing data."""


class CheckpointTruncatedError(CheckpointError):
    def __init__(self, path: Union[str, Path], expected: int, actual: int):
        self.path = str(path)
        self.expected = expected
        self.actual = actual
        super().__init__(f"Checkpoint {self.path} truncated: expected {expected} bytes, found {actual}")


class CheckpointDimensionError(CheckpointError):
    def __init__(self, field: str, expected: int, actual: int):
        self.field = field
        self.expected = expected
        self.actual = actual
        super().__init__(f"Checkpoint {field}={actual} does not match expected {field}={expected}")


# ---------------------------------------------------------------------------
# Edit distance
# ---------------------------------------------------------------------------

class EditDistanceError(KgAlignError):
    """Base class for edit-distance computation errors."""


class DimensionMismatchError(EditDistanceError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"String-space dimension mismatch: {expected} vs {actual}")


class PathLengthError(EditDistanceError):
    def __init__(self, m: int, n: int, cap: int):
        self.m = m
        self.n = n
        self.cap = cap
        super().__init__(f"Path enumeration limited to lengths <= {cap}, got ({m}, {n})")


class MissingLatticeError(EditDistanceError):
    """Raised when gradients are requested from a result computed without keep_lattice."""


# ---------------------------------------------------------------------------
# Training, evaluation, configuration
# ---------------------------------------------------------------------------

class DivergenceError(KgAlignError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch}: mean loss {loss}")


class EvaluationError(KgAlignError):
    """Raised for empty query or pair sets."""


class ConfigError(KgAlignError):
    """Unknown keys, invalid values or missing input paths."""
