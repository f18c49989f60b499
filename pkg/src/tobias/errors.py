"""Exception hierarchy shared by every subpackage.

The CLI maps these onto exit codes (config 2, io 3, invariant 4).
"""


class TobiasError(Exception):
    exit_code = 1


class ConfigError(TobiasError):
    exit_code = 2


class DimensionError(ConfigError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class TobiasIOError(TobiasError):
    exit_code = 3


class ParseError(TobiasIOError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InvariantError(TobiasError):
    exit_code = 4


class EmptyForegroundError(InvariantError):
    """A saliency mask has no foreground cells."""


class StateError(InvariantError, RuntimeError):
    """An operation was invoked out of order (e.g. backward before forward)."""
