"""Exception types shared across the pipeline."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class EmptyRegionError(InvalidInputError):
    """A pixel region does not intersect the target raster."""


class BehindCameraError(ValueError):
    """A world point lies on or behind the camera plane."""


class HorizonError(ValueError):
    """A pixel ray never meets the ground plane in front of the camera."""


class NotOnGroundError(HorizonError):
    """An object's foot point cannot be placed on the road surface."""


class InsufficientDataError(ValueError):
    """Too few samples to fit the requested model."""


class NoConsensusError(ValueError):
    """RANSAC found no model with enough inliers."""


class NoLaneError(ValueError):
    """An operation requires a lane model but none is available."""


class DetectionFileError(ValueError):
    """A detections file record is malformed or invalid.

    line_number is 1-based.
    """

    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ConfigError(ValueError):
    """A configuration or calibration file cannot be used."""
