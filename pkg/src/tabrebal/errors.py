"""Exception hierarchy shared by every module.

Each error carries a distinct CLI exit code so shell callers can branch on
failure class without parsing messages.
"""


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code = 1


class ConfigError(ToolkitError):
    """Invalid or empty configuration (grids, hyperparameter grids, flags)."""

    exit_code = 2


class SchemaError(ToolkitError):
    """Metadata and CSV disagree about the column layout."""

    exit_code = 3


class DecodeError(ToolkitError):
    """A cell value cannot be encoded (unknown category, missing value)."""

    exit_code = 4


class RatioError(ToolkitError):
    """A requested under/oversampling ratio is infeasible for the data."""

    exit_code = 5


class DegenerateLabels(ToolkitError):
    """Labels contain a single class where both are required."""

    exit_code = 6


class InsufficientClassRows(ToolkitError):
    """A class has too few rows for the requested operation."""

    exit_code = 13


class DegenerateData(ToolkitError):
    """Data has no variance where structure is required (e.g. rank-0 PCA)."""

    exit_code = 14


class InsufficientData(ToolkitError):
    """An empty training set was supplied."""

    exit_code = 15


class ShapeError(ToolkitError):
    """Array shapes are incompatible with the requested operation."""

    exit_code = 7


class StrategyMismatch(ToolkitError):
    """A sampling strategy was requested from a model trained for another."""

    exit_code = 8


class DrawLimitExceeded(ToolkitError):
    """Rejection sampling exhausted its draw budget (the protocol's timeout).

    Attributes:
        kept: rows of the desired class obtained before the limit was hit.
        draws: total row draws consumed (equals the configured limit).
    """

    exit_code = 9

    def __init__(self, message: str, kept: int, draws: int):
        super().__init__(message)
        self.kept = kept
        self.draws = draws


class NonFiniteGradient(ToolkitError):
    """Training produced a NaN/inf gradient; the run is aborted."""

    exit_code = 10


class EmptyGenerationRegion(ToolkitError):
    """A resampler found no region to generate from (no danger rows /
    no eligible cluster); callers fall back to plain interpolation."""

    exit_code = 11
