"""Exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Bad configuration or usage (exit code 2)."""


class DataError(ValueError):
    """Malformed or inconsistent input data (exit code 3)."""


class FormatError(DataError):
    """Corrupt or unreadable serialized file (exit code 3)."""


class InternalError(RuntimeError):
    """An internal invariant was violated (exit code 4)."""
