"""Exception types shared across the package.

Plain argument validation (out-of-range thresholds, bad counts) raises
``ValueError``; the classes below mark domain failures that callers and the
CLI need to tell apart.
"""


class MvreconError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(MvreconError):
    """Operands have incompatible resolutions / array shapes."""


class DegenerateInputError(MvreconError):
    """Input is structurally valid but empty or measure-zero (empty ground
    truth, zero-area mesh, empty point cloud, empty voxelization)."""


class ConfigurationError(MvreconError):
    """Run configuration is inconsistent with the supported channel tables
    or module contracts. CLI exit code 2."""


class DataError(MvreconError):
    """Dataset on disk is missing, corrupt, or insufficient for the
    requested operation. CLI exit code 3."""


class DivergenceError(MvreconError):
    """A numeric computation produced non-finite values. CLI exit code 4."""


class RenderError(MvreconError):
    """Camera/scene geometry cannot be rendered (e.g. object behind the
    camera)."""
