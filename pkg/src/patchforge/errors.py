"""Exception hierarchy shared across the package."""


class PatchforgeError(Exception):
    """Base class for all package errors."""


class InvalidBoxError(PatchforgeError, ValueError):
    """Box with non-positive width or height."""


class ConfigError(PatchforgeError, ValueError):
    """Invalid or inconsistent configuration value."""


class ShapeError(PatchforgeError, ValueError):
    """Tensor shape mismatch."""


class ContractError(PatchforgeError, RuntimeError):
    """API precondition violated (non-scalar backward, frozen model, ...)."""


class LayoutError(PatchforgeError, RuntimeError):
    """Scene generator could not place the requested faces."""


class NumericError(PatchforgeError, RuntimeError):
    """NaN or divergence encountered during optimization."""


class ArtifactIOError(PatchforgeError, OSError):
    """Artifact on disk is missing, unreadable, or malformed."""
