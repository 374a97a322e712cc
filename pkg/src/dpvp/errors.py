"""Exception types shared across the package."""


class DPVPError(Exception):
    pass


class ConfigError(DPVPError, ValueError):
    """Invalid configuration: bad period table, split, variant, gate mode..."""


class DataError(DPVPError, ValueError):
    """A malformed interaction-log row."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.message = message
        self.line = line

    def __str__(self):
        if self.line is None:
            return self.message
        return f"line {self.line}: {self.message}"


class UnscorableError(DPVPError):
    """The (user, store) pair has no learned representation or no candidate foods."""
