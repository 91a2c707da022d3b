"""Exception types shared across the package."""


class GhostQueryError(Exception):
    """Base class for all package-specific errors."""


class InvalidMatrix(GhostQueryError):
    """Matrix input violates a structural precondition (shape, symmetry)."""


class NumericalFailure(GhostQueryError):
    """A numerical routine failed to converge or produced non-finite output."""


class ZeroVector(GhostQueryError):
    """A vector with zero norm was passed where a direction is required."""


class InsufficientSamples(GhostQueryError):
    """Too few samples for the requested statistic."""


class InvalidSpec(GhostQueryError):
    """Degenerate or inconsistent generation/model specification."""


class NoOracle(GhostQueryError):
    """Ground-truth labels requested for a corpus without known centroids."""


class EmptyInput(GhostQueryError):
    """An operation requiring a non-empty collection received an empty one."""


class FormatError(GhostQueryError):
    """Corrupt or incompatible container file.

    Carries the byte offset at which the problem was detected when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ShapeError(GhostQueryError):
    """Array dimensions do not match the operation's contract."""


class InvalidSchedule(GhostQueryError):
    """Noise-schedule parameters out of bounds."""


class InvalidStep(GhostQueryError):
    """Diffusion step index outside the valid range for the operation."""


class DegenerateKey(GhostQueryError):
    """A corpus item pools to a zero vector and cannot be indexed."""


class BuildError(GhostQueryError):
    """Index construction failed (e.g. duplicate item ids)."""


class EvalError(GhostQueryError):
    """Retrieval evaluation is missing required ground truth."""
