"""Exception hierarchy shared by the library and the CLI."""


class CdrHomeError(Exception):
    pass


class ConfigError(CdrHomeError, ValueError):
    """Invalid configuration or command-line usage (CLI exit code 1)."""


class DataError(CdrHomeError, ValueError):
    """Input data cannot be processed (CLI exit code 2)."""


class UnknownTowerError(DataError, KeyError):
    pass


class EmptyTraceError(DataError):
    pass


class UndefinedMetricError(DataError):
    """A metric has no defined value for the given inputs (empty set, zero vector, zero variance)."""


class DegenerateFieldError(UndefinedMetricError):
    pass
