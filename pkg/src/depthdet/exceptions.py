"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`DepthDetError`,
so the CLI can map error classes onto stable exit codes.
"""


class DepthDetError(Exception):
    """Base class for all package errors."""


class ConfigError(DepthDetError, ValueError):
    """Invalid parameter or configuration value."""


class ParseError(DepthDetError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(ParseError):
    """Structurally inconsistent input (mixed field counts, missing fields)."""


class UnsupportedFormatError(FormatError):
    """Recognised but unsupported encoding, e.g. binary PCD/PLY."""


class NonFiniteError(ParseError):
    """A coordinate parsed as NaN or infinity."""


class CalibrationError(DepthDetError, ValueError):
    """Projection matrix estimation failed."""


class ArityError(CalibrationError):
    """Too few correspondences."""


class DegenerateConfigurationError(CalibrationError):
    """Correspondences do not determine a unique projection (e.g. coplanar)."""


class BehindCameraError(DepthDetError, ValueError):
    """A point has non-positive homogeneous depth under the projection."""


class BoundsError(DepthDetError, IndexError):
    """A box does not lie inside the image it indexes."""


class BackendError(DepthDetError, RuntimeError):
    """Classifier backend failed."""


class ProtocolError(BackendError):
    """External classifier produced output violating the JSON protocol."""


class BackendTimeoutError(BackendError):
    """External classifier exceeded its time limit."""


class InputError(DepthDetError, ValueError):
    """Evaluation inputs are inconsistent (frame mismatch, empty dataset)."""


class PlacementError(DepthDetError, RuntimeError):
    """Synthetic scene objects could not be placed without overlap."""
