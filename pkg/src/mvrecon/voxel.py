"""Cubic occupancy grids: binarization, IoU, resolution changes, file I/O.

Conventions
-----------
Grids are dense cubic arrays indexed ``values[x, y, z]``. Serialized value
order is x-fastest (x, then y, then z), i.e. Fortran-order flattening of the
``[x, y, z]`` array. Occupancy probabilities live in ``[0, 1]``; binary grids
hold exactly ``{0, 1}``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeMismatchError

DEFAULT_THRESHOLD = 0.3

_VOXGRID_MAGIC = "VOXGRID v1"
# bytes a textual payload may contain; anything else marks the packed variant
_TEXT_BYTES = frozenset(b" \t\r\n0123456789.eE+-")


def _check_cubic(values: np.ndarray, name: str) -> None:
    if values.ndim != 3 or len(set(values.shape)) != 1:
        raise ShapeMismatchError(
            f"{name} must be a cubic 3D array, got shape {values.shape!r}"
        )
    if values.shape[0] < 1:
        raise ShapeMismatchError(f"{name} must have positive resolution")


@dataclass(frozen=True)
class VoxelGrid:
    """Cubic grid of occupancy probabilities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float32)
        _check_cubic(values, "VoxelGrid.values")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("occupancy probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @classmethod
    def uniform(cls, resolution: int, value: float, dtype=np.float32) -> "VoxelGrid":
        return cls(np.full((resolution,) * 3, value, dtype=dtype))


@dataclass(frozen=True)
class BinaryVoxelGrid:
    """Cubic grid of hard occupancy bits {0, 1}."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        _check_cubic(bits, "BinaryVoxelGrid.bits")
        if bits.dtype != np.uint8:
            uniq = np.unique(bits)
            if not np.all(np.isin(uniq, (0, 1))):
                raise ValueError("binary grid values must be exactly 0 or 1")
            bits = bits.astype(np.uint8)
        elif bits.size and bits.max() > 1:
            raise ValueError("binary grid values must be exactly 0 or 1")
        object.__setattr__(self, "bits", bits)

    @property
    def resolution(self) -> int:
        return self.bits.shape[0]

    def count_occupied(self) -> int:
        return int(self.bits.sum())

    def as_probabilities(self, dtype=np.float32) -> VoxelGrid:
        """Reinterpret the bits as a probability grid of exact 0.0 / 1.0."""
        return VoxelGrid(self.bits.astype(dtype))

    @classmethod
    def from_probabilities(cls, grid: VoxelGrid) -> "BinaryVoxelGrid":
        """Convert a grid whose values are already exactly {0, 1}."""
        values = grid.values
        if not np.all((values == 0.0) | (values == 1.0)):
            raise ValueError("grid holds fractional probabilities; binarize() it first")
        return cls(values.astype(np.uint8))


def _require_threshold(t: float) -> float:
    t = float(t)
    if not (0.0 < t < 1.0):
        raise ValueError(f"threshold must lie strictly inside (0, 1), got {t}")
    return t


def binarize(grid: VoxelGrid, t: float = DEFAULT_THRESHOLD) -> BinaryVoxelGrid:
    """Threshold probabilities with the strict rule ``occupied iff value > t``.

    Ties at exactly ``t`` count as empty.
    """
    t = _require_threshold(t)
    return BinaryVoxelGrid((grid.values > t).astype(np.uint8))


def iou(pred, gt: BinaryVoxelGrid, t: float = DEFAULT_THRESHOLD) -> float:
    """Intersection-over-union of ``pred`` (binarized at ``t``) against ``gt``.

    ``pred`` may be a probability grid or an already-binary grid. The ground
    truth must contain at least one occupied voxel.
    """
    if isinstance(pred, BinaryVoxelGrid):
        pred_bits = pred.bits
    else:
        pred_bits = binarize(pred, t).bits
    if pred_bits.shape != gt.bits.shape:
        raise ShapeMismatchError(
            f"resolution mismatch: pred {pred_bits.shape[0]} vs gt {gt.resolution}"
        )
    if gt.count_occupied() == 0:
        raise DegenerateInputError("ground truth grid has no occupied voxels")
    inter = int(np.count_nonzero(pred_bits & gt.bits))
    union = int(np.count_nonzero(pred_bits | gt.bits))
    return inter / union


def upsample_nearest(grid, factor: int):
    """Nearest-neighbor upsampling by an integer factor (block replication).

    Accepts either grid type and returns the same type. IoU between a
    prediction/ground-truth pair is exactly invariant under a common factor,
    since every source voxel turns into ``factor**3`` identical copies.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    if isinstance(grid, BinaryVoxelGrid):
        data, wrap = grid.bits, BinaryVoxelGrid
    else:
        data, wrap = grid.values, VoxelGrid
    out = data
    for axis in range(3):
        out = np.repeat(out, factor, axis=axis)
    return wrap(out)


def write_voxgrid(path, grid, binary: bool = False) -> None:
    """Write the VOXGRID v1 format: ``"VOXGRID v1 <resolution>"`` header line,
    then resolution**3 values in x-fastest order, either as whitespace
    separated decimals or packed little-endian 32-bit reals."""
    if isinstance(grid, BinaryVoxelGrid):
        values = grid.bits.astype(np.float32)
    else:
        values = grid.values
    flat = np.asarray(values, dtype=np.float32).flatten(order="F")
    header = f"{_VOXGRID_MAGIC} {values.shape[0]}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(flat.astype("<f4").tobytes())
        else:
            res = values.shape[0]
            lines = []
            for start in range(0, flat.size, res):
                row = flat[start : start + res]
                lines.append(" ".join(np.format_float_positional(v, trim="-") for v in row))
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


def read_voxgrid(path) -> VoxelGrid:
    """Read either VOXGRID variant back into a probability grid."""
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    m = re.fullmatch(rf"{_VOXGRID_MAGIC} (\d+)\s*", header.decode("ascii", "replace"))
    if not m:
        raise ValueError(f"not a VOXGRID v1 file: {path}")
    res = int(m.group(1))
    expected = res**3
    is_binary = len(payload) == 4 * expected and any(
        b not in _TEXT_BYTES for b in payload
    )
    if is_binary:
        flat = np.frombuffer(payload, dtype="<f4")
    else:
        flat = np.array(payload.split(), dtype=np.float32)
    if flat.size != expected:
        raise ValueError(
            f"VOXGRID payload holds {flat.size} values, expected {expected}"
        )
    return VoxelGrid(flat.reshape((res,) * 3, order="F"))
