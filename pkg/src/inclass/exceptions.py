"""Exception hierarchy shared by every module of the package."""


class InClassError(Exception):
    """Base class for all package errors."""


class InvalidInputError(InClassError, ValueError):
    """Non-finite or otherwise malformed numeric input."""


class DimensionError(InClassError, ValueError):
    """Array shapes do not agree."""


class ConfigError(InClassError, ValueError):
    """Invalid configuration or specification."""


class IngestionError(InClassError, ValueError):
    """A dataset file could not be parsed."""


class CheckpointError(InClassError, ValueError):
    """A checkpoint file is malformed. ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class OptimizerError(InClassError, FloatingPointError):
    """Non-finite gradient handed to the optimizer."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class DegenerateComponentError(InClassError, FloatingPointError):
    """A pseudo weight fell below the floor used inside logs and divisions.

    ``component`` and ``variate`` are zero-based indices; ``epoch`` and
    ``batch`` are filled in by the trainer when the error surfaces there.
    """

    def __init__(self, component, variate, value, epoch=None, batch=None):
        self.component = component
        self.variate = variate
        self.value = value
        self.epoch = epoch
        self.batch = batch
        super().__init__(self._describe())

    def _describe(self):
        msg = (f"pseudo weight of component {self.component} for variate "
               f"{self.variate} is {self.value:.3g}, below the degeneracy floor")
        if self.epoch is not None:
            msg += f" (epoch {self.epoch}, batch {self.batch})"
        return msg

    def at(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        self.args = (self._describe(),)
        return self


class TrainingError(InClassError, FloatingPointError):
    """Training produced a non-finite cost. ``state`` holds a diagnostic dump."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class EstimatorFailedError(InClassError, RuntimeError):
    """An auxiliary estimator (e.g. the classifier-based total correlation) diverged."""


class TableSizeError(ConfigError):
    """A histogram table would exceed the allowed number of cells."""
