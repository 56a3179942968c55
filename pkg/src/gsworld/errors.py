"""Exception types shared across the package."""


class GsWorldError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(GsWorldError):
    """Raised when tensor/image shapes are incompatible."""


class OutOfWorkspaceError(GsWorldError):
    """Raised when a pose falls outside the configured workspace box."""


class DegenerateObservationError(GsWorldError):
    """Raised when an observation unprojects to zero points inside the workspace."""


class EmptySceneError(GsWorldError):
    """Raised when the regressor finds no occupied grid cells."""


class SceneSpecError(GsWorldError):
    """Raised for invalid synthetic scene specifications."""


class TaskScriptError(GsWorldError):
    """Raised when a task script cannot produce a successful episode."""


class ManifestMismatchError(GsWorldError):
    """Raised when a checkpoint manifest disagrees with the requested config."""


class TrainingDivergedError(GsWorldError):
    """Raised when a loss or parameter becomes non-finite during training."""
