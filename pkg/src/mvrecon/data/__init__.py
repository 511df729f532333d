from .camera import CameraPose, sample_poses
from .dataset import (
    SceneSample,
    ViewRecord,
    dataset_checksum,
    generate_dataset,
    generate_scene,
    load_view_image,
    read_dataset,
    write_dataset,
)
from .render import occlusion_accepted, occlusion_fraction, render_view
from .shapes import CATEGORIES, ShapeSpec, generate_object, random_shape_spec

__all__ = [
    "CameraPose",
    "CATEGORIES",
    "SceneSample",
    "ShapeSpec",
    "ViewRecord",
    "dataset_checksum",
    "generate_dataset",
    "generate_scene",
    "generate_object",
    "load_view_image",
    "occlusion_accepted",
    "occlusion_fraction",
    "random_shape_spec",
    "read_dataset",
    "render_view",
    "sample_poses",
    "write_dataset",
]
