class TcaError(Exception):
    """Base class for errors raised by the package."""


class ShapeError(TcaError, ValueError):
    pass


class ConfigError(TcaError, ValueError):
    pass


class StateError(TcaError, RuntimeError):
    pass


class FormatError(TcaError, ValueError):
    """Malformed weight file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
