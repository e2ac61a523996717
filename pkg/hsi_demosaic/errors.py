"""Exception hierarchy for hsi-demosaic.

Every error derives from the built-in exception that matches its nature, so callers
can catch ``ValueError`` (or ``RuntimeError``) without importing this module. The
common ``HsiDemosaicError`` base lets the command line categorise failures.
"""

from __future__ import annotations

from pathlib import Path


class HsiDemosaicError(Exception):
    """Base class for all errors raised by hsi-demosaic."""

    category = "error"


class ShapeError(HsiDemosaicError, ValueError):
    """Array or tensor dimensions violate an operation's contract."""

    category = "shape"


class ConfigurationError(HsiDemosaicError, ValueError):
    """Invalid configuration, unknown plug-in name or unusable dataset."""

    category = "configuration"


class ParseError(HsiDemosaicError, ValueError):
    """A container file could not be decoded.

    Attributes:
        offset (int): Byte offset at which decoding failed.
        path (Path | None): File being decoded, when known.

    """

    category = "parse"

    def __init__(self, message: str, offset: int, path: Path | str | None = None):
        """Create a parse error that names the failing byte offset."""
        self.offset = offset
        self.path = Path(path) if path is not None else None
        where = f" in {self.path}" if self.path is not None else ""
        super().__init__(f"{message} at byte offset {offset}{where}")


class TrainingDivergenceError(HsiDemosaicError, FloatingPointError):
    """A training objective became non-finite."""

    category = "divergence"


class EstimationError(HsiDemosaicError, ValueError):
    """A statistical model cannot be estimated from the supplied data."""

    category = "estimation"


class DivergenceError(EstimationError):
    """The maximum-likelihood estimate lies on the boundary of the parameter space."""

    category = "divergence"

    def __init__(self, message: str, method: str):
        """Create a divergence error naming the offending method."""
        self.method = method
        super().__init__(message)


class IterationLimitError(HsiDemosaicError, RuntimeError):
    """An iterative solver did not converge within its iteration limit."""

    category = "iteration-limit"
