"""Scene records, procedural dataset generation, and (de)serialization.

On-disk layout::

    <root>/manifest.jsonl          one JSON record per object
    <root>/objects/<id>/gt.voxb    ground truth (binary VOXGRID, 0/1 values)
    <root>/objects/<id>/view_03.png

Manifest records carry per-file SHA-256 digests; readers verify them and
raise DataError on any mismatch. Generation is a pure function of
(seed, protocol constants): per-object RNG streams derive from
(seed, object index), so objects may be generated in any order or in
parallel with identical results.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from ..errors import DataError, DegenerateInputError
from ..voxel import BinaryVoxelGrid, read_voxgrid, write_voxgrid
from .camera import (
    CameraPose,
    DEFAULT_IMAGE_SIZE,
    DEFAULT_VIEW_COUNT,
    LIGHT_POWER_RANGE,
    LIGHT_SPECULAR_RANGE,
)
from .render import occlusion_fraction, render_view
from .shapes import CATEGORIES, ShapeSpec, generate_object, random_shape_spec
from . import shapes as _shapes

MANIFEST_NAME = "manifest.jsonl"
_MAX_POSE_ATTEMPTS_PER_VIEW = 50


@dataclass(frozen=True)
class ViewRecord:
    pose: CameraPose
    image: np.ndarray  # (H, W, 3) uint8

    def image_float(self) -> np.ndarray:
        """(3, H, W) float32 in [0, 1] for the network path."""
        return np.ascontiguousarray(self.image.transpose(2, 0, 1)).astype(np.float32) / 255.0


@dataclass(frozen=True)
class SceneSample:
    object_id: str
    category: str
    gt: BinaryVoxelGrid
    views: tuple
    light_power: float
    light_specular: float

    def __post_init__(self):
        if len(self.views) < 1:
            raise DegenerateInputError("a scene sample needs at least one view")
        sizes = {v.image.shape for v in self.views}
        if len(sizes) != 1:
            raise DataError(f"views disagree on image shape: {sizes}")
        if self.gt.count_occupied() == 0:
            raise DegenerateInputError("ground truth grid is empty")

    @property
    def n_views(self) -> int:
        return len(self.views)


def _random_occluders(rng: np.random.Generator, n: int):
    """Thin distractor slabs placed outside the object cube, between likely
    camera rays and the object."""
    boxes = []
    for _ in range(n):
        azimuth = rng.uniform(0.0, 2 * np.pi)
        radius = rng.uniform(2.2, 3.5)
        cx, cy = radius * np.cos(azimuth), radius * np.sin(azimuth)
        cz = rng.uniform(0.5, 1.8)
        half = (rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0.4, 1.2))
        boxes.append(_shapes.Box((cx, cy, cz), half))
    return tuple(boxes)


def generate_scene(spec: ShapeSpec, object_id: str, rng: np.random.Generator,
                   n_views: int, resolution: int,
                   image_size: int = DEFAULT_IMAGE_SIZE,
                   with_occluders: bool = False) -> SceneSample:
    """Voxelize one spec and render accepted views under the pose protocol.

    Poses failing the occlusion test (> 12.5% hidden) are discarded and
    redrawn, so the sample always carries ``n_views`` accepted views.
    """
    gt = generate_object(spec, resolution)
    light_power = float(rng.uniform(*LIGHT_POWER_RANGE))
    light_specular = float(rng.uniform(*LIGHT_SPECULAR_RANGE))
    base_color = 0.35 + 0.55 * rng.random(3)
    occluders = _random_occluders(rng, int(rng.integers(1, 3))) if with_occluders else ()

    views = []
    attempts = 0
    while len(views) < n_views:
        if attempts >= _MAX_POSE_ATTEMPTS_PER_VIEW * n_views:
            raise DataError(
                f"could not find {n_views} unoccluded views for {object_id}"
            )
        attempts += 1
        pose = CameraPose(yaw_deg=float(rng.uniform(0.0, 360.0)))
        if occluders:
            _fraction, accepted = occlusion_fraction(
                occluders, gt, pose, image_size=image_size
            )
            if not accepted:
                continue
        image = render_view(
            gt, pose, light_power=light_power, light_specular=light_specular,
            image_size=image_size, base_color=base_color, occluders=occluders,
        )
        image8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
        views.append(ViewRecord(pose=pose, image=image8))
    return SceneSample(
        object_id=object_id,
        category=spec.category,
        gt=gt,
        views=tuple(views),
        light_power=light_power,
        light_specular=light_specular,
    )


def generate_dataset(n_objects: int, n_views: int, resolution: int,
                     seed: int, image_size: int = DEFAULT_IMAGE_SIZE,
                     categories=CATEGORIES, with_occluders: bool = False) -> list:
    """Produce ``n_objects`` scene samples cycling through the categories."""
    if n_objects < 1:
        raise ValueError("need at least one object")
    samples = []
    for index in range(n_objects):
        rng = np.random.default_rng([seed, index])
        category = categories[index % len(categories)]
        spec = random_shape_spec(category, rng)
        object_id = f"{category}-{index:03d}"
        samples.append(
            generate_scene(
                spec, object_id, rng, n_views, resolution,
                image_size=image_size, with_occluders=with_occluders,
            )
        )
    return samples


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_dataset(samples, root) -> str:
    """Write samples + manifest; returns the manifest path."""
    root = os.fspath(root)
    os.makedirs(root, exist_ok=True)
    records = []
    for sample in samples:
        obj_dir = os.path.join(root, "objects", sample.object_id)
        os.makedirs(obj_dir, exist_ok=True)
        gt_rel = os.path.join("objects", sample.object_id, "gt.voxb")
        write_voxgrid(os.path.join(root, gt_rel), sample.gt, binary=True)
        view_records = []
        for i, view in enumerate(sample.views):
            img_rel = os.path.join("objects", sample.object_id, f"view_{i:02d}.png")
            Image.fromarray(view.image).save(os.path.join(root, img_rel), format="PNG")
            view_records.append(
                {
                    "index": i,
                    "image_file": img_rel,
                    "image_sha256": _sha256(os.path.join(root, img_rel)),
                    "pose": view.pose.to_dict(),
                }
            )
        records.append(
            {
                "object_id": sample.object_id,
                "category": sample.category,
                "resolution": sample.gt.resolution,
                "gt_file": gt_rel,
                "gt_sha256": _sha256(os.path.join(root, gt_rel)),
                "light_power": sample.light_power,
                "light_specular": sample.light_specular,
                "views": view_records,
            }
        )
    manifest = os.path.join(root, MANIFEST_NAME)
    with open(manifest, "w", encoding="ascii") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    return manifest


_RECORD_KEYS = {
    "object_id", "category", "resolution", "gt_file", "gt_sha256",
    "light_power", "light_specular", "views",
}


def read_dataset(root) -> list:
    """Load and verify a dataset; raises DataError on missing files, digest
    mismatches, or schema violations."""
    root = os.fspath(root)
    manifest = os.path.join(root, MANIFEST_NAME)
    if not os.path.isfile(manifest):
        raise DataError(f"no manifest at {manifest}")
    samples = []
    with open(manifest, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"manifest line {line_no} is not JSON: {exc}") from exc
            if set(record) != _RECORD_KEYS:
                raise DataError(
                    f"manifest line {line_no} has keys {sorted(record)}, "
                    f"expected {sorted(_RECORD_KEYS)}"
                )
            gt_path = os.path.join(root, record["gt_file"])
            if not os.path.isfile(gt_path):
                raise DataError(f"missing grid file {record['gt_file']}")
            if _sha256(gt_path) != record["gt_sha256"]:
                raise DataError(f"checksum mismatch for {record['gt_file']}")
            grid = read_voxgrid(gt_path)
            gt = BinaryVoxelGrid.from_probabilities(grid)
            views = []
            for vrec in record["views"]:
                img_path = os.path.join(root, vrec["image_file"])
                if not os.path.isfile(img_path):
                    raise DataError(f"missing image file {vrec['image_file']}")
                if _sha256(img_path) != vrec["image_sha256"]:
                    raise DataError(f"checksum mismatch for {vrec['image_file']}")
                image = np.asarray(Image.open(img_path).convert("RGB"))
                views.append(
                    ViewRecord(pose=CameraPose.from_dict(vrec["pose"]), image=image)
                )
            samples.append(
                SceneSample(
                    object_id=record["object_id"],
                    category=record["category"],
                    gt=gt,
                    views=tuple(views),
                    light_power=record["light_power"],
                    light_specular=record["light_specular"],
                )
            )
    if not samples:
        raise DataError(f"manifest {manifest} lists no samples")
    return samples


def load_view_image(path, size: int) -> np.ndarray:
    """Load a view image for the network: center-crop to square if needed,
    resize to (size, size), return (3, size, size) float32 in [0, 1]."""
    img = Image.open(path).convert("RGB")
    w, h = img.size
    if w != h:
        side = min(w, h)
        left, top = (w - side) // 2, (h - side) // 2
        img = img.crop((left, top, left + side, top + side))
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def dataset_checksum(root) -> str:
    """Digest of the manifest bytes; stable across identical generations."""
    return _sha256(os.path.join(os.fspath(root), MANIFEST_NAME))
