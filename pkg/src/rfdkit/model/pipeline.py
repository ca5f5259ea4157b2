"""End-to-end reconstruction-from-detection pipeline.

Training couples the detection loss with a shape loss computed on the
aligned support clouds of the most confident proposals; only proposals whose
center lands near a ground-truth object supervise shape. Prediction runs
detection, selection, alignment, and shape decoding, then extracts one mesh
per surviving detection and places it back into the world frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError
from ..geometry import OrientedBox, TriangleMesh
from ..meshing import mesh_to_world, mise_extract, normalize_to_unit_aabb
from ..nn import no_grad, ops
from ..nn.layers import Module
from ..nn.tensor import Tensor, constant
from ..synthetic.dataset import SceneSample
from .alignment import CanonicalAlignment, select_for_training
from .detector import Detector, assign_targets, box_loss, predicted_boxes
from .shapegen import ShapeGenerator


@dataclass
class PipelineConfig:
    """Model hyperparameters shared by training and inference."""

    n_seeds: int = 1024
    n_proposals: int = 256
    n_train_detections: int = 10
    group_radius: float = 1.0
    group_points: int = 1024
    variant: str = "full"
    latent_dim: int = 32
    shape_feature_dim: int = 512
    n_train_queries: int = 512
    min_objectness: float = 0.5
    nms_iou: float = 0.25
    shape_weight: float = 0.005
    seg_weight: float = 100.0
    loss_weights: dict = field(default_factory=dict)
    mesh_coarse: int = 16
    mesh_fine: int = 64

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Prediction:
    """One reconstructed object instance."""

    box: OrientedBox
    canonical_mesh: TriangleMesh
    world_mesh: TriangleMesh
    n_field_evaluations: int


@dataclass
class TrainStepResult:
    loss: Tensor
    parts: dict = field(default_factory=dict)


class ReconstructionPipeline(Module):
    """Detector + canonical alignment + shape generator."""

    def __init__(self, rng: np.random.Generator, config: PipelineConfig | None = None,
                 template_scales: np.ndarray | None = None):
        super().__init__()
        self.config = config or PipelineConfig()
        c = self.config
        self.detector = Detector(rng, n_seeds=c.n_seeds, n_proposals=c.n_proposals,
                                 template_scales=template_scales)
        self.aligner = CanonicalAlignment(rng, radius=c.group_radius, m_points=c.group_points)
        self.shapegen = ShapeGenerator(rng, variant=c.variant, latent_dim=c.latent_dim,
                                       feature_dim=c.shape_feature_dim, seg_weight=c.seg_weight)

    def prepare(self, points: np.ndarray, instance_ids: np.ndarray | None = None) -> dict:
        return self.detector.prepare(points, instance_ids)

    def _decoded_pose(self, out) -> tuple[Tensor, Tensor]:
        heading = out.heading_for(out.predicted_heading_bins())
        scale = out.scale_for(out.predicted_templates(), self.detector.template_scales)
        return heading, scale

    def forward_train(self, sample: SceneSample, cache: dict, rng: np.random.Generator,
                      mode: str = "joint") -> TrainStepResult:
        """One training forward pass.

        ``mode`` picks the stage: "detector" trains the detection loss alone,
        "pretrain" adds the shape loss computed on detached detector outputs,
        "joint" couples both losses end to end, and "frozen" trains only the
        shape loss on detached detector outputs (the no-joint ablation).
        """
        if mode not in ("joint", "detector", "pretrain", "frozen"):
            raise ConfigError(f"unknown training mode {mode!r}")
        c = self.config
        out = self.detector(cache)
        targets = assign_targets(out.centers, out.seed_xyz, cache["seed_instances"],
                                 sample.boxes, self.detector.template_scales)
        total, parts = box_loss(out, targets, weights=c.loss_weights or None)
        parts["box"] = total.item()
        if mode == "detector":
            parts["n_shape_supervised"] = 0.0
            parts["total"] = total.item()
            return TrainStepResult(loss=total, parts=parts)
        if mode in ("pretrain", "frozen"):
            out = replace(out, features=out.features.detach(), center=out.center.detach(),
                          heading_residuals=out.heading_residuals.detach(),
                          scale_residuals=out.scale_residuals.detach())
            if mode == "frozen":
                total = constant(np.zeros(()))

        heading, scale = self._decoded_pose(out)
        idx = select_for_training(out, c.n_train_detections)
        group = self.aligner(sample.points.astype(np.float64), out, heading, scale, idx)
        n_supervised = 0
        if group is not None:
            supervised = np.flatnonzero(targets.pos_mask[group.indices])
            n_supervised = supervised.size
            if n_supervised:
                sub = group.subset(supervised)
                matched = targets.matched_gt[group.indices[supervised]]
                owner = (matched + 1)[:, None]
                fg = (sample.instance_ids[sub.point_ids] == owner).astype(np.float64)
                k = c.n_train_queries
                queries = np.zeros((n_supervised, k, 3))
                occ = np.zeros((n_supervised, k))
                for row, j in enumerate(matched):
                    # balanced batch: half inside, half outside
                    inside = np.flatnonzero(sample.occ_labels[j] > 0.5)
                    outside = np.flatnonzero(sample.occ_labels[j] < 0.5)
                    pick = np.concatenate([
                        inside[rng.integers(0, inside.size, size=k // 2)],
                        outside[rng.integers(0, outside.size, size=k - k // 2)],
                    ])
                    queries[row] = sample.occ_points[j][pick]
                    occ[row] = sample.occ_labels[j][pick]
                eps = rng.standard_normal((n_supervised, c.latent_dim))
                l_shape, sparts = self.shapegen.forward_train(sub, fg, queries, occ, eps)
                parts.update(sparts)
                parts["shape"] = l_shape.item()
                total = total + c.shape_weight * l_shape
        parts["n_shape_supervised"] = float(n_supervised)
        parts["total"] = total.item()
        return TrainStepResult(loss=total, parts=parts)

    def predict(self, points: np.ndarray, mesh_fine: int | None = None) -> list[Prediction]:
        """Detect, align, and reconstruct every confident object in a cloud."""
        c = self.config
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                cache = self.prepare(points)
                out = self.detector(cache)
                boxes, idx = predicted_boxes(out, self.detector.template_scales,
                                             min_objectness=c.min_objectness, nms_iou=c.nms_iou)
                if not boxes:
                    return []
                heading, scale = self._decoded_pose(out)
                group = self.aligner(np.asarray(points, dtype=np.float64), out,
                                     heading, scale, idx)
                if group is None:
                    return []
                boxes = [boxes[p] for p in group.positions]
                f_star, _ = self.shapegen.encode(group)

                fine = mesh_fine or c.mesh_fine
                predictions = []
                for d, box in enumerate(boxes):
                    f_row = ops.take_rows(f_star, np.array([d]))

                    def evaluate(q, f_row=f_row):
                        return self.shapegen.occupancy_probs(q, f_row)

                    canonical, n_eval = mise_extract(evaluate, coarse=c.mesh_coarse, fine=fine)
                    if canonical.faces.size:
                        world = mesh_to_world(normalize_to_unit_aabb(canonical), box.center,
                                              box.heading, box.scale)
                    else:
                        world = canonical
                    predictions.append(Prediction(box=box, canonical_mesh=canonical,
                                                  world_mesh=world, n_field_evaluations=n_eval))
                return predictions
        finally:
            if was_training:
                self.train()
