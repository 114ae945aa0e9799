"""Exception types shared across planekit."""


class PlanekitError(Exception):
    """Base class for all planekit errors."""


class InvalidInputError(PlanekitError):
    """An input violates a documented precondition."""


class DegenerateRayError(PlanekitError):
    """The pixel ray is (near) parallel to the plane being intersected."""


class PlaneThroughOriginError(PlanekitError):
    """A transformed plane passes through or behind the camera center."""


class EmptyLossError(PlanekitError):
    """No valid pixels or cells remain to average a loss over."""


class EmptyMetricError(PlanekitError):
    """No valid pixels or instances remain to compute a metric over."""


class EmptyInstanceError(PlanekitError):
    """A predicted instance has an empty binarized region."""
