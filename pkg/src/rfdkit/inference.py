"""Run a trained pipeline on a scan and persist the reconstruction.

One scan maps to one output directory holding, per detected object, a
canonical-frame mesh in both OBJ and PLY form, plus a single world-frame
scene mesh and a JSON list of oriented box records. The layout round-trips:
``read_prediction_dir`` recovers exactly what ``write_predictions`` stored,
which is how evaluation consumes inference output.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry.boxes import OrientedBox
from .geometry.mesh import TriangleMesh, concat_meshes
from .geometry.meshio import read_mesh_ply, read_point_ply, write_mesh_ply, write_obj
from .model.pipeline import Prediction, ReconstructionPipeline

__all__ = [
    "BOXES_NAME",
    "SCENE_MESH_NAME",
    "box_from_record",
    "box_record",
    "read_prediction_dir",
    "run_inference",
    "write_predictions",
]

BOXES_NAME = "boxes.json"
SCENE_MESH_NAME = "scene.ply"


def _object_stem(index: int) -> str:
    return f"object_{index:03d}"


def box_record(box: OrientedBox) -> dict:
    return {
        "label": int(box.label),
        "score": float(box.score),
        "center": [float(x) for x in box.center],
        "scale": [float(x) for x in box.scale],
        "heading": float(box.heading),
    }


def box_from_record(rec: dict) -> OrientedBox:
    try:
        return OrientedBox(
            center=np.asarray(rec["center"], dtype=np.float64),
            scale=np.asarray(rec["scale"], dtype=np.float64),
            heading=float(rec["heading"]),
            label=int(rec["label"]),
            score=float(rec["score"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed box record: {exc}") from exc


def write_predictions(out_dir, predictions: list[Prediction]) -> dict:
    """Write meshes and box records; empty predictions still produce valid files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    world_parts = []
    for i, pred in enumerate(predictions):
        stem = _object_stem(i)
        write_obj(out_dir / f"{stem}.obj", pred.canonical_mesh, name=stem)
        write_mesh_ply(out_dir / f"{stem}.ply", pred.canonical_mesh)
        records.append(box_record(pred.box))
        if pred.world_mesh.n_faces:
            world_parts.append(pred.world_mesh)
    write_mesh_ply(out_dir / SCENE_MESH_NAME, concat_meshes(world_parts))
    payload = json.dumps(records, sort_keys=True, indent=1) + "\n"
    (out_dir / BOXES_NAME).write_text(payload)
    return {
        "n_objects": len(records),
        "n_scene_faces": sum(m.n_faces for m in world_parts),
        "out_dir": str(out_dir),
    }


def read_prediction_dir(out_dir) -> list[tuple[OrientedBox, TriangleMesh]]:
    """Boxes paired with their canonical meshes, in written order."""
    out_dir = Path(out_dir)
    boxes_path = out_dir / BOXES_NAME
    if not boxes_path.exists():
        raise FormatError(f"missing {BOXES_NAME} in {out_dir}")
    try:
        records = json.loads(boxes_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable {boxes_path}: {exc}") from exc
    if not isinstance(records, list):
        raise FormatError(f"{boxes_path} must hold a list of box records")
    out = []
    for i, rec in enumerate(records):
        mesh_path = out_dir / f"{_object_stem(i)}.ply"
        if not mesh_path.exists():
            raise FormatError(f"missing object mesh {mesh_path}")
        out.append((box_from_record(rec), read_mesh_ply(mesh_path)))
    return out


def run_inference(pipeline: ReconstructionPipeline, scan_path, out_dir,
                  mesh_fine: int | None = None) -> dict:
    """Detect and reconstruct every object in a point scan, then write results."""
    points, _ = read_point_ply(scan_path)
    predictions = pipeline.predict(points.astype(np.float64), mesh_fine=mesh_fine)
    summary = write_predictions(out_dir, predictions)
    summary["n_field_evaluations"] = int(sum(p.n_field_evaluations for p in predictions))
    return summary
