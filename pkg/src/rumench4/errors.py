"""Exception hierarchy shared by every stage of the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by rumench4."""


class ConfigError(PipelineError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class SchemaError(PipelineError, ValueError):
    """A CSV header is missing a required column."""

    def __init__(self, column, source=None):
        self.column = column
        self.source = source
        where = f" in {source}" if source else ""
        super().__init__(f"missing required column {column!r}{where}")


class RowError(PipelineError, ValueError):
    """A data row could not be parsed."""

    def __init__(self, line, message, source=None):
        self.line = line
        self.source = source
        where = f"{source}:" if source else "line "
        super().__init__(f"{where}{line}: {message}")


class AnchorError(PipelineError, ValueError):
    """Clock-drift anchors are inconsistent."""


class DataError(PipelineError, ValueError):
    """Input data violate an invariant (ordering, alignment, range)."""


class EmptySeriesError(DataError):
    pass


class UnitError(DataError):
    pass


class AlignmentError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DomainError(PipelineError, ValueError):
    """Argument outside the mathematical domain of a function."""
