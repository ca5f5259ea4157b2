"""Detection AP, canonical mesh IoU, and instance completion AP.

Detection follows the standard protocol: per class, predictions are sorted
by confidence, greedily matched to the best unmatched ground-truth instance
of their scene, and scored with all-point interpolated average precision.
Completion reuses the same machinery with a voxel-overlap match function on
a shared world lattice. Canonical mesh IoU compares two object-frame meshes
on a fixed grid over the unit cube.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .geometry.boxes import OrientedBox, box_iou
from .geometry.mesh import TriangleMesh
from .geometry.voxel import grid_iou, lattice_iou, voxelize_mesh, voxelize_on_lattice

__all__ = [
    "COMPLETION_VOXEL",
    "CompletionRecord",
    "DetectionRecord",
    "MeshInstance",
    "ReconstructionRecord",
    "average_precision",
    "format_report",
    "instance_completion_map",
    "mesh_iou_canonical",
    "reconstruction_iou",
    "write_report",
]

COMPLETION_VOXEL = 0.047  # metres per lattice cell


@dataclass
class DetectionRecord:
    """One scene's labeled, scored predictions and its ground truth.

    Detection fills both lists with oriented boxes; completion reuses the
    container with lattice instances. Matching only reads ``label`` and
    ``score`` plus whatever the pairwise overlap function understands.
    """

    predictions: list
    ground_truth: list


@dataclass
class MeshInstance:
    """A labeled world-frame mesh with a detection confidence."""

    mesh: TriangleMesh
    label: int
    score: float = 1.0


@dataclass
class CompletionRecord:
    """Predicted and ground-truth instance meshes for one scene."""

    predictions: list[MeshInstance]
    ground_truth: list[MeshInstance]


@dataclass
class ReconstructionRecord:
    """Canonical meshes paired with their world boxes for one scene."""

    predictions: list[tuple[OrientedBox, TriangleMesh]]
    ground_truth: list[tuple[OrientedBox, TriangleMesh]]


def _interpolated_ap(scores: np.ndarray, hits: np.ndarray, n_gt: int) -> float:
    """Area under the all-point interpolated precision-recall curve."""
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    hits = hits[order]
    tp = np.cumsum(hits)
    recall = tp / n_gt
    precision = tp / np.arange(1, len(hits) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev) * envelope))


def _greedy_match(preds: list, gts: list, iou_fn, threshold: float):
    """Confidence-ordered greedy matching within one scene.

    A prediction is a hit when its best still-unmatched ground-truth overlap
    reaches the threshold; later duplicates of the same instance count as
    false positives.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    taken = [False] * len(gts)
    scores = np.empty(len(preds), dtype=np.float64)
    hits = np.zeros(len(preds), dtype=bool)
    for row, i in enumerate(order):
        scores[row] = preds[i].score
        best, best_iou = -1, 0.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            iou = iou_fn(preds[i], gt)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= threshold:
            taken[best] = True
            hits[row] = True
    return scores, hits


def average_precision(records: Sequence[DetectionRecord], iou_fn=box_iou,
                      threshold: float = 0.5) -> dict:
    """Per-class all-point AP and its unweighted mean.

    Classes absent from the ground truth are excluded from the mean; a class
    with ground truth but no predictions scores zero.
    """
    records = list(records)
    labels = sorted({g.label for rec in records for g in rec.ground_truth})
    if not labels:
        raise DataError("average_precision needs at least one ground-truth instance")
    per_class: dict[int, float] = {}
    counts: dict[int, int] = {}
    for label in labels:
        scores, hits, n_gt = [], [], 0
        for rec in records:
            gts = [g for g in rec.ground_truth if g.label == label]
            preds = [p for p in rec.predictions if p.label == label]
            n_gt += len(gts)
            s, h = _greedy_match(preds, gts, iou_fn, threshold)
            scores.append(s)
            hits.append(h)
        per_class[label] = _interpolated_ap(
            np.concatenate(scores), np.concatenate(hits), n_gt)
        counts[label] = n_gt
    mean = float(np.mean(list(per_class.values())))
    return {"per_class": per_class, "map": mean, "n_ground_truth": counts}


def mesh_iou_canonical(pred: TriangleMesh, gt: TriangleMesh, depth: int) -> float:
    """Voxel IoU of two canonical-frame meshes on a ``depth``^3 unit-cube grid."""
    if depth < 1:
        raise ConfigError(f"grid depth must be positive, got {depth}")
    size = 1.0 / depth
    origin = (-0.5, -0.5, -0.5)
    dims = (depth, depth, depth)
    a = voxelize_mesh(pred, origin, size, dims)
    b = voxelize_mesh(gt, origin, size, dims)
    return grid_iou(a, b)


def reconstruction_iou(records: Sequence[ReconstructionRecord],
                       depths: Sequence[int] = (16, 32, 64),
                       match_threshold: float = 0.5) -> dict:
    """Mean canonical mesh IoU over ground-truth instances.

    Predictions are paired to ground truth by confidence-ordered greedy box
    matching at ``match_threshold`` 3D IoU; an unmatched ground-truth
    instance scores zero at every depth. Ground truth with an empty mesh is
    skipped with a warning.
    """
    depths = tuple(int(d) for d in depths)
    totals = {d: 0.0 for d in depths}
    per_scene = []
    n_gt = 0
    n_matched = 0
    for rec in records:
        order = sorted(range(len(rec.predictions)),
                       key=lambda i: -rec.predictions[i][0].score)
        taken = [False] * len(rec.ground_truth)
        pairs = []
        for i in order:
            box = rec.predictions[i][0]
            best, best_iou = -1, 0.0
            for j, (gt_box, _) in enumerate(rec.ground_truth):
                if taken[j] or gt_box.label != box.label:
                    continue
                iou = box_iou(box, gt_box)
                if iou > best_iou:
                    best, best_iou = j, iou
            if best >= 0 and best_iou >= match_threshold:
                taken[best] = True
                pairs.append((i, best))
        matched = {j: i for i, j in pairs}
        scene = {d: 0.0 for d in depths}
        scene_gt = 0
        for j, (_, gt_mesh) in enumerate(rec.ground_truth):
            if gt_mesh.n_faces == 0:
                warnings.warn("skipping ground-truth instance with empty mesh")
                continue
            scene_gt += 1
            if j not in matched:
                continue
            n_matched += 1
            pred_mesh = rec.predictions[matched[j]][1]
            for d in depths:
                scene[d] += mesh_iou_canonical(pred_mesh, gt_mesh, d)
        n_gt += scene_gt
        for d in depths:
            totals[d] += scene[d]
        per_scene.append({d: scene[d] / scene_gt if scene_gt else 0.0 for d in depths})
    if n_gt == 0:
        raise DataError("reconstruction_iou needs at least one ground-truth mesh")
    mean = {d: totals[d] / n_gt for d in depths}
    return {"mean": mean, "per_scene": per_scene,
            "n_ground_truth": n_gt, "n_matched": n_matched}


@dataclass
class _LatticeInstance:
    label: int
    score: float
    keys: np.ndarray  # sorted packed cell indices

    @staticmethod
    def iou(a: "_LatticeInstance", b: "_LatticeInstance") -> float:
        if len(a.keys) == 0 and len(b.keys) == 0:
            return 0.0  # two empty meshes never count as a match
        return lattice_iou(a.keys, b.keys)


def instance_completion_map(records: Sequence[CompletionRecord],
                            voxel: float = COMPLETION_VOXEL,
                            threshold: float = 0.5) -> dict:
    """Completion AP: the detection protocol with voxel-overlap matching.

    Every mesh is rasterized once onto the world-anchored lattice of
    ``voxel``-sized cells, so independently voxelized instances share the
    grid; the per-instance cell-set IoU drives the greedy matcher.
    """
    if voxel <= 0:
        raise ConfigError(f"lattice voxel size must be positive, got {voxel}")

    def keys(inst: MeshInstance) -> np.ndarray:
        if inst.mesh.n_vertices == 0:
            return np.zeros(0, dtype=np.int64)
        return voxelize_on_lattice(inst.mesh, voxel)

    converted = []
    for rec in records:
        preds = [_LatticeInstance(p.label, p.score, keys(p)) for p in rec.predictions]
        gts = [_LatticeInstance(g.label, 1.0, keys(g)) for g in rec.ground_truth]
        converted.append(DetectionRecord(preds, gts))
    return average_precision(converted, iou_fn=_LatticeInstance.iou, threshold=threshold)


def format_report(report: dict, class_names: Sequence[str] | None = None) -> str:
    """Fixed-width text table for a metric report dictionary."""
    lines = []
    detection = report.get("detection")
    if detection:
        lines.append("detection AP")
        lines.extend(_class_table(detection, class_names))
    completion = report.get("completion")
    if completion:
        lines.append("instance completion AP")
        lines.extend(_class_table(completion, class_names))
    reconstruction = report.get("reconstruction")
    if reconstruction:
        lines.append("canonical mesh IoU")
        for d, value in sorted(reconstruction["mean"].items()):
            lines.append(f"  {d:>3}-d  {value:.4f}")
        lines.append(f"  matched {reconstruction['n_matched']}"
                     f" of {reconstruction['n_ground_truth']}")
    return "\n".join(lines) + "\n"


def _class_table(section: dict, class_names: Sequence[str] | None) -> list[str]:
    rows = []
    for label, ap in sorted(section["per_class"].items()):
        label = int(label)
        name = class_names[label] if class_names else f"class {label}"
        count = section["n_ground_truth"][label]
        rows.append(f"  {name:<12} {ap:.4f}  ({count} instances)")
    rows.append(f"  {'mean':<12} {section['map']:.4f}")
    return rows


def write_report(report: dict, json_path, text_path=None,
                 class_names: Sequence[str] | None = None) -> None:
    """Write the JSON report, and optionally its text rendering."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if text_path is not None:
        Path(text_path).write_text(format_report(report, class_names))
