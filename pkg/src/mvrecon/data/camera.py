"""Viewing-sphere camera protocol and the pinhole projection model.

Protocol constants: cameras sit on a sphere of radius 10 unit lengths at a
fixed 30-degree pitch with zero roll; yaw is sampled uniformly on [0, 360).
The lens has a 96 mm focal length on a 32 mm sensor. Light power and specular
strength are drawn per scene from [500, 2000] and [0.75, 3]. Both camera and
light track the object at the origin.

The object's canonical cube [-1, 1]^3 scales to world half-side 1.2, so
typical shapes fill most of the frame without clipping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import RenderError

PITCH_DEG = 30.0
ROLL_DEG = 0.0
CAMERA_DISTANCE = 10.0
FOCAL_MM = 96.0
SENSOR_MM = 32.0
DEFAULT_VIEW_COUNT = 24
DEFAULT_IMAGE_SIZE = 256
LIGHT_POWER_RANGE = (500.0, 2000.0)
LIGHT_SPECULAR_RANGE = (0.75, 3.0)
MAX_OCCLUSION_FRACTION = 0.125
WORLD_HALF_SIDE = 1.2


@dataclass(frozen=True)
class CameraPose:
    yaw_deg: float
    pitch_deg: float = PITCH_DEG
    roll_deg: float = ROLL_DEG
    distance: float = CAMERA_DISTANCE
    focal_mm: float = FOCAL_MM

    def to_dict(self) -> dict:
        return {
            "yaw_deg": self.yaw_deg,
            "pitch_deg": self.pitch_deg,
            "roll_deg": self.roll_deg,
            "distance": self.distance,
            "focal_mm": self.focal_mm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(**d)


def sample_poses(n: int = DEFAULT_VIEW_COUNT, seed=0) -> list:
    """Draw ``n`` protocol poses with i.i.d. uniform yaw; deterministic per
    seed."""
    n = int(n)
    if n < 1:
        raise ValueError(f"pose count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return [CameraPose(yaw_deg=float(y)) for y in rng.uniform(0.0, 360.0, size=n)]


class Camera:
    """World -> pixel projection for a pose looking at the origin, z-up."""

    def __init__(self, pose: CameraPose, image_size: int):
        self.pose = pose
        self.image_size = int(image_size)
        yaw = math.radians(pose.yaw_deg)
        pitch = math.radians(pose.pitch_deg)
        self.position = pose.distance * np.array(
            [math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), math.sin(pitch)]
        )
        forward = -self.position / np.linalg.norm(self.position)
        world_up = np.array([0.0, 0.0, 1.0])
        if abs(np.dot(forward, world_up)) > 0.999:
            raise RenderError("camera looks straight up/down; roll frame undefined")
        right = np.cross(forward, world_up)
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        roll = math.radians(pose.roll_deg)
        if roll != 0.0:
            c, s = math.cos(roll), math.sin(roll)
            right, up = c * right + s * up, -s * right + c * up
        self.right, self.up, self.forward = right, up, forward
        self.focal_px = pose.focal_mm / SENSOR_MM * self.image_size
        self.center_px = self.image_size / 2.0

    def to_camera(self, pts: np.ndarray) -> np.ndarray:
        """(N, 3) world points -> camera frame (x right, y up, z forward)."""
        rel = pts - self.position
        return np.stack(
            [rel @ self.right, rel @ self.up, rel @ self.forward], axis=-1
        )

    def project(self, pts: np.ndarray):
        """Project (N, 3) world points; returns (pixel_xy (N, 2), depth (N,)).

        Pixel y grows downward. Depths <= 0 are behind the camera.
        """
        cam = self.to_camera(np.asarray(pts, dtype=np.float64))
        z = cam[..., 2]
        safe = np.where(z > 0, z, np.nan)
        u = self.center_px + self.focal_px * cam[..., 0] / safe
        v = self.center_px - self.focal_px * cam[..., 1] / safe
        return np.stack([u, v], axis=-1), z
