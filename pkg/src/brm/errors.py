"""Exception hierarchy shared by every module."""


class BRMError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(BRMError, ValueError):
    """Malformed input document. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class GeographicCoordinatesError(BRMError, ValueError):
    pass


class OutOfBoundsError(BRMError, IndexError):
    pass


class OutOfMapError(BRMError, ValueError):
    """A frame footprint leaves the raster."""


class ConfigError(BRMError, ValueError):
    pass


class MapFormatError(BRMError, ValueError):
    """Ratio-map or raster file is unreadable or written by an incompatible version."""


class RunError(BRMError):
    """An error raised while processing one frame of an experiment."""

    def __init__(self, message: str, frame: int):
        super().__init__(f"frame {frame}: {message}")
        self.frame = frame
