"""Multi-view voxel reconstruction: networks, fusion, metrics, toy data."""

__version__ = "0.1.0"

from .voxel import BinaryVoxelGrid, VoxelGrid, binarize, iou, upsample_nearest

__all__ = [
    "BinaryVoxelGrid",
    "VoxelGrid",
    "binarize",
    "iou",
    "upsample_nearest",
    "__version__",
]
