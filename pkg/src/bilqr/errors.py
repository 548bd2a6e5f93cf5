"""Exception hierarchy shared by all modules."""


class BilqrError(Exception):
    """Base class for all library errors."""


class InvalidInputError(BilqrError):
    """Non-finite or otherwise malformed numeric input."""


class DimensionMismatchError(BilqrError):
    """Shapes of supplied arrays do not line up (ragged trajectories etc.)."""


class DegenerateDataError(BilqrError):
    """Data carries no usable information (rank-0 regressor, empty batch)."""


class DivergenceError(BilqrError):
    """A rollout produced a non-finite state."""

    def __init__(self, step: int, msg: str | None = None):
        self.step = step
        super().__init__(msg or f"state became non-finite at step {step}")


class LineSearchStalledError(BilqrError):
    """Backtracking line search could not make progress."""


class GenerationError(BilqrError):
    """Trajectory generation exceeded its retry budget."""
