"""Exception types shared by every engine module.

Bad-argument failures also subclass ValueError so callers that only know
about the standard library still catch them.
"""


class SyncDiffError(Exception):
    """Base class for every engine failure. Maps to CLI exit code 3."""


class ConfigError(SyncDiffError, ValueError):
    """A configuration key is missing, unknown or invalid. Exit code 2."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class ScheduleError(SyncDiffError, ValueError):
    pass


class DimensionError(SyncDiffError, ValueError):
    pass


class RangeError(SyncDiffError, ValueError):
    pass


class GeometryError(SyncDiffError, ValueError):
    pass


class NumericError(SyncDiffError, ArithmeticError):
    pass


class VarianceError(NumericError):
    pass


class TrainingDivergenceError(NumericError):
    def __init__(self, iteration, loss):
        super().__init__(f"Training diverged at iteration {iteration} (loss={loss})")
        self.iteration = iteration
        self.loss = loss


class UnsupportedTransitionError(SyncDiffError, ValueError):
    pass


class FormatError(SyncDiffError, ValueError):
    """A tensor or checkpoint file does not match its binary layout."""


def check_same_shape(a, b, what="grids"):
    if a.shape != b.shape:
        raise DimensionError(f"Shape mismatch between {what}: {a.shape} vs {b.shape}")


class StepError(SyncDiffError):
    """A module error raised inside one denoising step, with the step attached."""

    def __init__(self, index, t, s, cause):
        super().__init__(f"Denoising step {index} (t={t} -> s={s}) failed: {cause}")
        self.index = index
        self.t = t
        self.s = s
