"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value, range, or unknown key."""


class ShapeError(ValueError):
    """Array or tensor shapes do not line up."""


class BoundsError(IndexError):
    """An index (frame, camera, ...) is outside its valid range."""


class BehindCameraError(ValueError):
    """A point has non-positive depth in the camera frame."""


class NumericError(FloatingPointError):
    """NaN or Inf encountered where finite values are required."""
