"""Exception hierarchy shared by every stage.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``ModelingError`` -> 3.
"""


class SpiForecastError(Exception):
    """Base class for all package errors."""


class DataError(SpiForecastError):
    """Input data is unreadable, malformed or inconsistent."""


class FetchError(DataError):
    """The indicators API could not be read."""


class PaginationError(FetchError):
    pass


class UnknownIndicatorError(FetchError):
    pass


class ModelingError(SpiForecastError):
    """A model could not be fitted or a stage produced nothing usable."""


class ArimaFitError(ModelingError):
    pass


class AllFeaturesExcludedError(ModelingError):
    """Every candidate feature was excluded by the ARIMA filter."""


class StageError(SpiForecastError):
    """Wraps a failure inside one pipeline stage with the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
