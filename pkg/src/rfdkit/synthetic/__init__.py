"""Procedural scenes: parametric shape families, scan simulation, corpora."""

from .shapes import FAMILIES, extrude_polygon, sample_shape, triangulate_polygon
from .scenes import (
    Scene,
    SceneObject,
    generate_scene,
    sample_occupancy_gt,
    sample_surface_points,
    simulate_partial_scan,
    visibility_filter,
)
from .dataset import (
    SceneSample,
    generate_corpus,
    read_manifest,
    read_scene,
    scene_paths,
    verify_corpus,
    write_scene,
)

__all__ = [
    "FAMILIES", "extrude_polygon", "sample_shape", "triangulate_polygon",
    "Scene", "SceneObject", "generate_scene", "sample_occupancy_gt",
    "sample_surface_points", "simulate_partial_scan", "visibility_filter",
    "SceneSample", "generate_corpus", "read_manifest", "read_scene",
    "scene_paths", "verify_corpus", "write_scene",
]
