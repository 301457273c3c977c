"""Exception hierarchy shared across the package."""


class GsculptError(Exception):
    """Base class for all package errors."""


# --- scene / file format ---

class MalformedHeader(GsculptError):
    pass


class MissingProperty(GsculptError):
    def __init__(self, name: str):
        super().__init__(f"PLY is missing required vertex property: {name}")
        self.name = name


class NonFiniteAttribute(GsculptError):
    def __init__(self, index: int, attribute: str):
        super().__init__(f"non-finite {attribute} at Gaussian index {index}")
        self.index = index
        self.attribute = attribute


class EmptyScene(GsculptError):
    pass


class IoFailure(GsculptError):
    pass


class NonOrthonormalRotation(GsculptError):
    pass


class DuplicateViewId(GsculptError):
    pass


class BadIntrinsics(GsculptError):
    pass


class EmptyResult(GsculptError):
    pass


class MissingLabels(GsculptError):
    pass


class SelectionMismatch(GsculptError):
    """Selection's scene_hash does not match the target scene."""


# --- epipolar propagation ---

class SingularIntrinsics(GsculptError):
    pass


class DegenerateEpipole(GsculptError):
    pass


class RayBehindCamera(GsculptError):
    pass


class EmptySegment(GsculptError):
    """Epipolar line misses the image; caller skips the view."""


# --- voting ---

class DimensionMismatch(GsculptError):
    pass


class EmptySelection(GsculptError):
    """No Gaussian cleared the vote threshold."""


# --- toolbox ---

class NonPositiveEpsilon(GsculptError):
    pass


class WouldEmptyScene(GsculptError):
    pass


class EditorUnavailable(GsculptError):
    pass


# --- perception ---

class RemoteUnavailable(GsculptError):
    pass


class NoPositiveClick(GsculptError):
    pass


# --- benchmark ---

class SpecInfeasible(GsculptError):
    pass
