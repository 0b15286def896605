"""Exception hierarchy shared by every stage of the pipeline."""


class CleanetError(Exception):
    """Base class for all library errors."""


class ConfigurationError(CleanetError, ValueError):
    pass


class DimensionError(CleanetError, ValueError):
    pass


class IngestionError(CleanetError, ValueError):
    """Raised when a CSV row or cell cannot be turned into a finite float."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConsistencyError(CleanetError, ValueError):
    pass


class StateError(CleanetError, RuntimeError):
    pass


class InterfaceError(CleanetError, TypeError):
    pass


class TrainingError(CleanetError, RuntimeError):
    """Training aborted. ``last_good`` holds the most recent finite model, if any."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
