"""Software rasterizer for voxel solids: exposed cube faces, z-buffered
perspective projection, Lambertian shading with a Blinn-Phong highlight.

The light is co-located with the camera (it tracks the object, like the
camera does); scene-level light power scales the diffuse term and the
specular setting scales the highlight.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateInputError, RenderError
from ..voxel import BinaryVoxelGrid
from .camera import (
    Camera,
    CameraPose,
    LIGHT_POWER_RANGE,
    LIGHT_SPECULAR_RANGE,
    MAX_OCCLUSION_FRACTION,
    WORLD_HALF_SIDE,
)
from .shapes import Box

BACKGROUND = np.array([0.9, 0.9, 0.9])
OBJECT_ID = 1
OCCLUDER_ID = 2
_NEAR_PLANE = 0.05

# each face: (axis, direction, corner offsets in grid units)
_FACE_OFFSETS = {}
for _axis in range(3):
    for _sign in (-1, 1):
        u_axis, v_axis = [a for a in range(3) if a != _axis]
        base = np.zeros((4, 3))
        base[:, _axis] = 1.0 if _sign > 0 else 0.0
        base[1, u_axis] = 1.0
        base[2, u_axis] = 1.0
        base[2, v_axis] = 1.0
        base[3, v_axis] = 1.0
        _FACE_OFFSETS[(_axis, _sign)] = base


def grid_to_world(coords: np.ndarray, resolution: int) -> np.ndarray:
    """Grid-unit coordinates [0, resolution] -> world coordinates."""
    return (coords / resolution * 2.0 - 1.0) * WORLD_HALF_SIDE


def exposed_faces(bits: np.ndarray):
    """Quads separating occupied voxels from empty space (or the boundary).

    Returns (corners (F, 4, 3) in grid units, normals (F, 3)).
    """
    occupied = bits.astype(bool)
    padded = np.pad(occupied, 1)
    corners = []
    normals = []
    for axis in range(3):
        for sign in (-1, 1):
            shift = np.roll(padded, -sign, axis=axis)
            exposed = occupied & ~shift[1:-1, 1:-1, 1:-1]
            cells = np.argwhere(exposed).astype(np.float64)
            if len(cells) == 0:
                continue
            offs = _FACE_OFFSETS[(axis, sign)]
            corners.append(cells[:, None, :] + offs[None, :, :])
            normal = np.zeros(3)
            normal[axis] = float(sign)
            normals.append(np.tile(normal, (len(cells), 1)))
    if not corners:
        return np.zeros((0, 4, 3)), np.zeros((0, 3))
    return np.concatenate(corners), np.concatenate(normals)


def box_faces(box: Box):
    """World-space quads of an axis-aligned box: (6, 4, 3) + normals."""
    c = np.asarray(box.center, dtype=np.float64)
    h = np.asarray(box.half_extents, dtype=np.float64)
    corners = []
    normals = []
    for axis in range(3):
        for sign in (-1, 1):
            quad = (_FACE_OFFSETS[(axis, sign)] * 2.0 - 1.0) * h + c
            corners.append(quad)
            normal = np.zeros(3)
            normal[axis] = float(sign)
            normals.append(normal)
    return np.stack(corners), np.stack(normals)


def _shade(normals: np.ndarray, centers: np.ndarray, camera: Camera,
           base_color, light_power: float, light_specular: float) -> np.ndarray:
    """Per-face RGB under a headlight tracked to the object."""
    to_light = camera.position[None, :] - centers
    to_light /= np.linalg.norm(to_light, axis=1, keepdims=True)
    ndotl = np.clip((normals * to_light).sum(axis=1), 0.0, None)
    diffuse = 0.25 + 0.65 * (light_power / LIGHT_POWER_RANGE[1]) * ndotl
    # headlight: the half vector equals the light direction
    spec = 0.12 * (light_specular / LIGHT_SPECULAR_RANGE[1]) * ndotl**16
    color = np.asarray(base_color)[None, :] * diffuse[:, None] + spec[:, None]
    return np.clip(color, 0.0, 1.0)


def _rasterize(camera: Camera, quads, quad_normals, colors, ids, image_size: int):
    """Z-buffered rasterization of shaded quads.

    quads: world-space (F, 4, 3); returns (image (H, W, 3), id buffer (H, W)).
    """
    h = w = int(image_size)
    image = np.tile(BACKGROUND, (h, w, 1))
    zbuf = np.full((h, w), np.inf)
    idbuf = np.full((h, w), -1, dtype=np.int32)
    if len(quads) == 0:
        return image, idbuf

    centers = quads.mean(axis=1)
    facing = ((centers - camera.position[None, :]) * quad_normals).sum(axis=1) < 0.0
    quads, colors, ids = quads[facing], colors[facing], ids[facing]
    if len(quads) == 0:
        return image, idbuf

    pix, depth = camera.project(quads.reshape(-1, 3))
    pix = pix.reshape(-1, 4, 2)
    depth = depth.reshape(-1, 4)
    ok = (depth > _NEAR_PLANE).all(axis=1)
    pix, depth, colors, ids = pix[ok], depth[ok], colors[ok], ids[ok]

    inv_z = 1.0 / depth
    tri_splits = (np.array([0, 1, 2]), np.array([0, 2, 3]))
    for f in range(len(pix)):
        # split the quad 0-1-2-3 into triangles (0,1,2) and (0,2,3)
        for tri_idx in tri_splits:
            p = pix[f][tri_idx]
            iz = inv_z[f][tri_idx]
            x0 = max(int(np.floor(p[:, 0].min() - 0.5)), 0)
            x1 = min(int(np.ceil(p[:, 0].max() + 0.5)), w - 1)
            y0 = max(int(np.floor(p[:, 1].min() - 0.5)), 0)
            y1 = min(int(np.ceil(p[:, 1].max() + 0.5)), h - 1)
            if x1 < x0 or y1 < y0:
                continue
            gx, gy = np.meshgrid(
                np.arange(x0, x1 + 1) + 0.5, np.arange(y0, y1 + 1) + 0.5
            )
            d01 = p[1] - p[0]
            d02 = p[2] - p[0]
            det = d01[0] * d02[1] - d01[1] * d02[0]
            if det == 0.0:
                continue
            rx = gx - p[0, 0]
            ry = gy - p[0, 1]
            b1 = (rx * d02[1] - ry * d02[0]) / det
            b2 = (ry * d01[0] - rx * d01[1]) / det
            b0 = 1.0 - b1 - b2
            inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
            if not inside.any():
                continue
            # 1/z interpolates affinely across a planar triangle
            pix_depth = 1.0 / (b0 * iz[0] + b1 * iz[1] + b2 * iz[2])
            win = inside & (pix_depth < zbuf[y0 : y1 + 1, x0 : x1 + 1])
            if not win.any():
                continue
            sub_z = zbuf[y0 : y1 + 1, x0 : x1 + 1]
            sub_img = image[y0 : y1 + 1, x0 : x1 + 1]
            sub_id = idbuf[y0 : y1 + 1, x0 : x1 + 1]
            sub_z[win] = pix_depth[win]
            sub_img[win] = colors[f]
            sub_id[win] = ids[f]
    return image, idbuf


def _scene_quads(gt, pose_camera: Camera, base_color, light_power,
                 light_specular, occluders):
    resolution = gt.resolution
    corners_grid, normals = exposed_faces(gt.bits)
    quads = grid_to_world(corners_grid, resolution)
    colors = _shade(
        normals, quads.mean(axis=1), pose_camera, base_color, light_power, light_specular
    )
    ids = np.full(len(quads), OBJECT_ID, dtype=np.int32)
    if occluders:
        occ_color = np.array([0.35, 0.3, 0.3])
        for box in occluders:
            oq, on = box_faces(box)
            oc = _shade(
                on, oq.mean(axis=1), pose_camera, occ_color, light_power, light_specular
            )
            quads = np.concatenate([quads, oq])
            normals = np.concatenate([normals, on])
            colors = np.concatenate([colors, oc])
            ids = np.concatenate([ids, np.full(6, OCCLUDER_ID, dtype=np.int32)])
    return quads, normals, colors, ids


def _check_in_front(gt, camera: Camera) -> None:
    cube = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
        dtype=np.float64,
    ) * WORLD_HALF_SIDE
    depth = camera.to_camera(cube)[:, 2]
    if depth.max() <= _NEAR_PLANE:
        raise RenderError("object lies behind the camera")


def render_view(gt, pose: CameraPose, light_power: float = 1250.0,
                light_specular: float = 1.5, image_size: int = 256,
                base_color=(0.55, 0.55, 0.85), occluders=(),
                allow_empty: bool = False) -> np.ndarray:
    """Render one view to a float RGB image (H, W, 3) in [0, 1]."""
    if not isinstance(gt, BinaryVoxelGrid):
        raise TypeError("render_view expects a BinaryVoxelGrid")
    if gt.count_occupied() == 0 and not allow_empty:
        raise DegenerateInputError("refusing to render an empty grid")
    camera = Camera(pose, image_size)
    _check_in_front(gt, camera)
    quads, _normals, colors, ids = _scene_quads(
        gt, camera, base_color, light_power, light_specular, occluders
    )
    image, _ = _rasterize(camera, quads, _normals, colors, ids, image_size)
    return image


def occlusion_accepted(fraction: float) -> bool:
    """The protocol drops a view only when strictly more than 12.5% of the
    object is hidden; the boundary value is accepted."""
    return fraction <= MAX_OCCLUSION_FRACTION


def occlusion_fraction(occluders, gt, pose: CameraPose, image_size: int = 256):
    """Fraction of the object's unoccluded silhouette hidden by occluders.

    Returns (fraction, accepted).
    """
    camera = Camera(pose, image_size)
    _check_in_front(gt, camera)
    quads, normals, colors, ids = _scene_quads(
        gt, camera, (0.5, 0.5, 0.5), 1000.0, 1.0, occluders
    )
    obj_only = ids == OBJECT_ID
    _, id_solo = _rasterize(
        camera, quads[obj_only], normals[obj_only], colors[obj_only],
        ids[obj_only], image_size,
    )
    total = int((id_solo == OBJECT_ID).sum())
    if total == 0:
        raise DegenerateInputError("object projects to no pixels from this pose")
    _, id_full = _rasterize(camera, quads, normals, colors, ids, image_size)
    visible = int((id_full == OBJECT_ID).sum())
    fraction = (total - visible) / total
    return fraction, occlusion_accepted(fraction)
