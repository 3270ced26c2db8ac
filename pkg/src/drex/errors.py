"""Exception hierarchy shared by every stage of the pipeline."""


class DrexError(Exception):
    """Base class for all errors raised by this package."""


class InvalidTrajectoryError(DrexError, ValueError):
    pass


class EmptyDatasetError(DrexError, ValueError):
    pass


class MdpValidationError(DrexError, ValueError):
    """Raised when an MDP (or its JSON document) violates an invariant.

    ``line`` is the 1-based line in the source document when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConvergenceError(DrexError, RuntimeError):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (final residual {residual:.3e})")


class DemonstratorDegenerateError(DrexError, RuntimeError):
    pass


class InsufficientLevelsError(DrexError, ValueError):
    pass


class TrainingDivergedError(DrexError, RuntimeError):
    def __init__(self, message, last_finite_params=None):
        self.last_finite_params = last_finite_params
        super().__init__(message)


class TheoremInapplicableError(DrexError, ValueError):
    pass


class PreconditionError(DrexError, ValueError):
    pass


class StageError(DrexError, RuntimeError):
    """Wraps an error raised inside a pipeline stage with the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
