"""Building-ratio-map global localization for downward-looking aerial cameras."""

from brm.errors import (
    BRMError,
    ConfigError,
    GeographicCoordinatesError,
    MapFormatError,
    OutOfBoundsError,
    OutOfMapError,
    ParseError,
    RunError,
)

__version__ = "0.1.0"

__all__ = [
    "BRMError",
    "ConfigError",
    "GeographicCoordinatesError",
    "MapFormatError",
    "OutOfBoundsError",
    "OutOfMapError",
    "ParseError",
    "RunError",
]
