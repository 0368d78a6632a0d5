"""Exception types shared across planekit."""


class PlanekitError(Exception):
    """Base class for all planekit errors."""


class DegeneratePlane(PlanekitError):
    """Plane offset is too close to zero for the closest-point encoding."""


class DegenerateGeometry(PlanekitError):
    """Input points are collinear/coincident and define no unique plane."""


class NoPlaneFound(PlanekitError):
    """RANSAC could not find a plane meeting the minimum inlier count."""


class InsufficientDirections(PlanekitError):
    """Not enough distinct directions to complete a Manhattan frame."""


class EmptySplit(PlanekitError):
    """A dataset split received zero scenes."""


class NonPositiveDepth(PlanekitError):
    """Depth statistics require strictly positive depths."""


class EmptyRegion(PlanekitError):
    """A depth-statistics region contains no valid pixels."""


class InvalidConfig(PlanekitError):
    """A layout configuration references a role with no assigned plane."""


class CameraOutsideRoom(PlanekitError):
    """Synthetic scene camera must be strictly inside the room."""


class BadFormat(PlanekitError):
    """A file does not match the expected on-disk format."""


class OutOfRange(PlanekitError):
    """A value cannot be represented in the target format."""


class SchemaError(PlanekitError):
    """A JSON document does not match the expected schema."""
