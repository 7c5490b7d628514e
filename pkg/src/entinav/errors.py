"""Exception hierarchy shared by every module."""


class EntinavError(Exception):
    """Base class for all library errors."""


class InputError(EntinavError, ValueError):
    """An argument is malformed, non-finite or outside its domain."""


class BoundViolation(InputError):
    """A parameter lies outside its allowed interval."""

    def __init__(self, field, value, low, high):
        self.field = field
        self.value = value
        self.low = low
        self.high = high
        super().__init__(f"{field}={value!r} outside [{low}, {high}]")


class NotFoundError(EntinavError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "not found"


class ConfigurationError(EntinavError):
    """A mapping or scenario is structurally unusable (e.g. singular matrix)."""


class IncompleteDataError(EntinavError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"missing study pairs: {self.missing}")


class FitError(EntinavError):
    pass


class StatisticsError(EntinavError):
    pass


class InsufficientDataError(EntinavError):
    pass


class WorldError(EntinavError):
    pass


class PlanningError(EntinavError):
    pass


class ValidationError(InputError):
    """Scenario or config invariant violated; ``path`` names the offending field."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path:
            where = f"{path}: "
        if line is not None:
            where = f"line {line}: {where}"
        super().__init__(where + message)


class ParseError(InputError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = f"line {line}" if line is not None else "unknown location"
        if column is not None:
            loc += f", column {column}"
        super().__init__(f"{loc}: {message}")
