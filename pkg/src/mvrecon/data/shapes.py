"""Procedural solid primitives and their voxelization.

Primitives live in the object's canonical frame, the cube [-1, 1]^3. A voxel
is occupied iff its center falls strictly inside the union of primitives.
Category builders keep every primitive within |coordinate| <= 0.75 so any
yaw renders without frustum clipping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateInputError
from ..voxel import BinaryVoxelGrid

CATEGORIES = (
    "box-furniture",
    "cylinder-lamp",
    "composite-chair",
    "composite-table",
)

_EXTENT_LIMIT = 0.75


@dataclass(frozen=True)
class Box:
    center: tuple
    half_extents: tuple

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d = np.abs(pts - np.asarray(self.center))
        return np.all(d < np.asarray(self.half_extents), axis=-1)


@dataclass(frozen=True)
class Cylinder:
    """Axis-aligned cylinder along z."""

    center: tuple
    radius: float
    half_height: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        radial = (pts[..., 0] - c[0]) ** 2 + (pts[..., 1] - c[1]) ** 2
        return (radial < self.radius**2) & (np.abs(pts[..., 2] - c[2]) < self.half_height)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d = pts - np.asarray(self.center)
        return np.einsum("...i,...i->...", d, d) < self.radius**2


@dataclass(frozen=True)
class ShapeSpec:
    """Boolean union of primitives plus a category tag."""

    primitives: tuple = field(default_factory=tuple)
    category: str = "uncategorized"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        mask = np.zeros(pts.shape[:-1], dtype=bool)
        for prim in self.primitives:
            mask |= prim.contains(pts)
        return mask


def voxel_centers(resolution: int) -> np.ndarray:
    """(r, r, r, 3) array of voxel-center coordinates in [-1, 1]^3."""
    axis = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def generate_object(spec: ShapeSpec, resolution: int) -> BinaryVoxelGrid:
    """Voxelize the union by center inclusion; deterministic per spec."""
    if not spec.primitives:
        raise DegenerateInputError("shape spec holds no primitives")
    mask = spec.contains(voxel_centers(resolution))
    if not mask.any():
        raise DegenerateInputError(
            f"spec voxelizes to an empty grid at resolution {resolution}"
        )
    return BinaryVoxelGrid(mask.astype(np.uint8))


def _clamped(value: float) -> float:
    return float(np.clip(value, -_EXTENT_LIMIT, _EXTENT_LIMIT))


def random_shape_spec(category: str, rng: np.random.Generator) -> ShapeSpec:
    """Draw a random composition for one of the synthetic categories."""
    if category == "box-furniture":
        w, d, h = rng.uniform(0.30, 0.65, size=3)
        top_h = rng.uniform(0.08, 0.16)
        prims = (
            Box((0.0, 0.0, -0.5 + h / 2), (w, d, h / 2)),
            Box((0.0, 0.0, -0.5 + h + top_h / 2), (w * 1.15, d * 1.15, top_h / 2)),
        )
    elif category == "cylinder-lamp":
        base_r = rng.uniform(0.25, 0.45)
        pole_r = rng.uniform(0.08, 0.14)
        shade_r = rng.uniform(0.28, 0.5)
        shade_h = rng.uniform(0.12, 0.22)
        prims = (
            Cylinder((0.0, 0.0, -0.65), base_r, 0.10),
            Cylinder((0.0, 0.0, 0.0), pole_r, 0.65),
            Cylinder((0.0, 0.0, 0.55), shade_r, shade_h),
        )
    elif category == "composite-chair":
        seat = rng.uniform(0.32, 0.5)
        leg = rng.uniform(0.07, 0.11)
        back_h = rng.uniform(0.3, 0.5)
        off = seat - leg
        prims = (
            Box((0.0, 0.0, -0.05), (seat, seat, 0.09)),
            Box((off, off, -0.4), (leg, leg, 0.3)),
            Box((-off, off, -0.4), (leg, leg, 0.3)),
            Box((off, -off, -0.4), (leg, leg, 0.3)),
            Box((-off, -off, -0.4), (leg, leg, 0.3)),
            Box((0.0, seat - 0.07, back_h - 0.1), (seat, 0.07, back_h)),
        )
    elif category == "composite-table":
        top = rng.uniform(0.45, 0.7)
        leg = rng.uniform(0.07, 0.11)
        off = top - leg - 0.02
        prims = (
            Box((0.0, 0.0, 0.32), (top, top, 0.08)),
            Box((off, off, -0.2), (leg, leg, 0.52)),
            Box((-off, off, -0.2), (leg, leg, 0.52)),
            Box((off, -off, -0.2), (leg, leg, 0.52)),
            Box((-off, -off, -0.2), (leg, leg, 0.52)),
        )
    else:
        raise ValueError(f"unknown category {category!r}; known: {CATEGORIES}")

    clipped = []
    for prim in prims:
        if isinstance(prim, Box):
            c = tuple(_clamped(v) for v in prim.center)
            clipped.append(Box(c, prim.half_extents))
        else:
            clipped.append(prim)
    return ShapeSpec(tuple(clipped), category)
