"""Corpus layout: per-scene point cloud, metadata, and occupancy files.

Each scene is three files - a binary PLY scan with instance ids, a JSON
sidecar with the object placements, and a tensor container holding canonical
meshes plus balanced occupancy samples. The corpus manifest stores a sha256
per file so training and evaluation can refuse to run on a corpus that is
not byte-for-byte the one that was generated.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..container import read_container, write_container
from ..errors import DataError, DataMismatchError, FormatError
from ..geometry import TriangleMesh, read_point_ply, write_point_ply
from ..rng import rng_for
from .scenes import Scene, SceneObject, generate_scene, sample_occupancy_gt, simulate_partial_scan
from .shapes import FAMILIES

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


def scene_paths(root, index: int) -> tuple[Path, Path, Path]:
    root = Path(root)
    stem = f"scene_{index:04d}"
    return root / f"{stem}.ply", root / f"{stem}.json", root / f"{stem}.rfdk"


@dataclass
class SceneSample:
    index: int
    points: np.ndarray  # (n, 3) float32
    instance_ids: np.ndarray  # (n,) int32, 0 is background
    objects: list[SceneObject]
    occ_points: list[np.ndarray]  # per object, (m, 3) float32 canonical
    occ_labels: list[np.ndarray]  # per object, (m,) float32 in {0, 1}

    @property
    def boxes(self):
        return [o.world_box() for o in self.objects]


def write_scene(root, index: int, scene: Scene, points: np.ndarray,
                instance_ids: np.ndarray, occ: list[tuple[np.ndarray, np.ndarray]]) -> None:
    ply_path, json_path, occ_path = scene_paths(root, index)
    write_point_ply(ply_path, points.astype(np.float32), instance_ids.astype(np.int32))
    meta = {
        "scene_index": index,
        "n_points": int(len(points)),
        "objects": [
            {
                "family": o.family,
                "label": int(o.label),
                "center": [float(x) for x in o.center],
                "scale": [float(x) for x in o.scale],
                "heading": float(o.heading),
                "instance_id": int(o.instance_id),
            }
            for o in scene.objects
        ],
    }
    json_path.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    entries: dict[str, np.ndarray] = {}
    for i, (obj, (opts, olabels)) in enumerate(zip(scene.objects, occ)):
        entries[f"mesh_verts_{i}"] = obj.mesh.vertices.astype(np.float32)
        entries[f"mesh_faces_{i}"] = obj.mesh.faces.astype(np.float32)
        entries[f"occ_points_{i}"] = opts.astype(np.float32)
        entries[f"occ_labels_{i}"] = olabels.astype(np.float32)
    write_container(occ_path, entries)


def read_scene(root, index: int) -> SceneSample:
    ply_path, json_path, occ_path = scene_paths(root, index)
    for p in (ply_path, json_path, occ_path):
        if not p.exists():
            raise FormatError(f"missing scene file {p}")
    points, instance_ids = read_point_ply(ply_path)
    meta = json.loads(json_path.read_text())
    entries = read_container(occ_path)
    objects = []
    occ_points = []
    occ_labels = []
    for i, rec in enumerate(meta["objects"]):
        mesh = TriangleMesh(entries[f"mesh_verts_{i}"].astype(np.float64),
                            entries[f"mesh_faces_{i}"].astype(np.int64))
        objects.append(SceneObject(
            family=rec["family"],
            label=int(rec["label"]),
            mesh=mesh,
            center=np.asarray(rec["center"], dtype=np.float64),
            scale=np.asarray(rec["scale"], dtype=np.float64),
            heading=float(rec["heading"]),
            instance_id=int(rec["instance_id"]),
        ))
        occ_points.append(entries[f"occ_points_{i}"])
        occ_labels.append(entries[f"occ_labels_{i}"])
    return SceneSample(index, points, instance_ids, objects, occ_points, occ_labels)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_one_scene(root, seed: int, index: int, n_points: int) -> None:
    """Generate and write scene ``index``; independent of every other scene."""
    scene = generate_scene(rng_for(seed, "layout", index))
    points, ids = simulate_partial_scan(scene, n_points, rng_for(seed, "scan", index))
    occ = [
        sample_occupancy_gt(obj.mesh, rng_for(seed, "occupancy", index, i))
        for i, obj in enumerate(scene.objects)
    ]
    write_scene(root, index, scene, points, ids, occ)


def generate_corpus(root, seed: int, n_scenes: int, n_points: int,
                    name: str = "corpus", n_workers: int = 1) -> dict:
    """Write a deterministic corpus and its manifest; returns the manifest.

    Scenes draw from per-index RNG streams, so the corpus bytes do not
    depend on ``n_workers``.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if n_scenes < 1:
        raise DataError("corpus needs at least one scene")
    if n_workers > 1:
        import multiprocessing

        jobs = [(root, seed, index, n_points) for index in range(n_scenes)]
        with multiprocessing.Pool(n_workers) as pool:
            pool.starmap(generate_one_scene, jobs)
    else:
        for index in range(n_scenes):
            generate_one_scene(root, seed, index, n_points)
    files: dict[str, str] = {}
    for index in range(n_scenes):
        for p in scene_paths(root, index):
            files[p.name] = _sha256(p)
    manifest = {
        "format_version": FORMAT_VERSION,
        "name": name,
        "seed": int(seed),
        "n_scenes": int(n_scenes),
        "n_points": int(n_points),
        "families": list(FAMILIES),
        "files": files,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise FormatError(f"no corpus manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"corpus manifest is not valid json: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported corpus format version {manifest.get('format_version')}")
    return manifest


def verify_corpus(root) -> dict:
    """Check every corpus file against the manifest hashes."""
    root = Path(root)
    manifest = read_manifest(root)
    for fname, want in manifest["files"].items():
        path = root / fname
        if not path.exists():
            raise FormatError(f"corpus file missing: {path}")
        got = _sha256(path)
        if got != want:
            raise DataMismatchError(f"corpus file {fname} does not match its manifest hash")
    return manifest
