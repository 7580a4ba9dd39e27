"""Exception hierarchy shared by every module."""


class BrickxarError(Exception):
    """Base class for all engine errors."""


# model
class RigidityError(BrickxarError):
    """Placement transform is not rigid within tolerance."""


class UnknownPartError(BrickxarError):
    """Part name is neither an inline file nor a parametric brick."""


class SequenceError(BrickxarError):
    """A STEP block contains more than one brick."""


class EmptyModelError(BrickxarError):
    """Model has no bricks."""


class DimensionError(BrickxarError):
    """Non-positive brick dimensions."""


class FormatError(BrickxarError):
    """Serialized model document violates the schema."""


# geometry
class DepthError(BrickxarError):
    """Unprojection requested at non-positive depth."""


# marker
class ResolutionError(BrickxarError):
    """Marker raster would have zero area."""


class DegenerateError(BrickxarError):
    """Too few or degenerate correspondences for pose estimation."""


class DivergenceError(BrickxarError):
    """Pose refinement failed to reach an acceptable residual."""


# render / eval
class SizeError(BrickxarError):
    """Paired images have mismatched dimensions."""


# instruction
class CompleteError(BrickxarError):
    """Cannot advance a completed session."""


class BoundaryError(BrickxarError):
    """Cannot retreat before the first step."""


# hand
class BoundsError(BrickxarError):
    """Touch point outside the frame."""


class NoSeedError(BrickxarError):
    """Segmentation requested with no color seeds."""


# sim / eval
class RangeError(BrickxarError):
    """Frame index outside the scene truth range."""


class SampleError(BrickxarError):
    """Too few frames for a profile."""
