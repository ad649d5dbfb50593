"""Exception types shared across the package."""


class TacticError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TacticError, ValueError):
    """Invalid configuration or sizes."""


class ValidationError(TacticError, ValueError):
    """Input tensors or indices violate an operation's preconditions."""


class DumpFormatError(TacticError, ValueError):
    """A binary head dump could not be parsed.

    ``offset`` is the byte offset at which parsing failed.
    """

    def __init__(self, message, offset, path=None):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")
        self.offset = offset
        self.path = path


class InvariantViolation(TacticError):
    """A checked mathematical invariant did not hold."""
