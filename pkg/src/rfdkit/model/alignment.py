"""Confident-proposal selection and differentiable canonical alignment.

Scene points around each selected detection are rigidly mapped into the box
frame using the predicted center and heading, with gradients flowing through
both. A small PointNet then predicts an additive rotation/translation
correction (zero-initialized, so alignment starts exactly rigid) and the
points are re-aligned with the correction applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry import ball_query_group
from ..nn import ops
from ..nn.layers import MLP, Module
from ..nn.tensor import Tensor, constant, default_dtype
from .detector import DetectionOutput

# R(theta).T = cos*E1 + sin*E2 + E3
_E1 = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
_E2 = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
_E3 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def rotation_t_from_heading(heading: Tensor) -> Tensor:
    """(3, 3) transpose of the yaw rotation, built from a length-1 heading tensor."""
    c = ops.reshape(ops.cos(heading), (1, 1))
    s = ops.reshape(ops.sin(heading), (1, 1))
    dt = default_dtype()
    return c * constant(_E1.astype(dt)) + s * constant(_E2.astype(dt)) + constant(_E3.astype(dt))


def align_rows(points: Tensor, center: Tensor, rot_t: Tensor,
               delta_rot: Tensor | None = None, delta_c: Tensor | None = None) -> Tensor:
    """(p - center - delta_c) @ (R(theta).T + delta_rot).T for (M, 3) rows."""
    shifted = points - center
    if delta_c is not None:
        shifted = shifted - delta_c
    mat = rot_t if delta_rot is None else rot_t + delta_rot
    return ops.matmul(shifted, ops.transpose(mat, (1, 0)))


def select_for_training(out: DetectionOutput, n_keep: int) -> np.ndarray:
    """Indices of the `n_keep` most object-like proposals, best first.

    Ties break toward the lower proposal index so selection is deterministic.
    """
    obj = out.objectness()
    if n_keep > obj.shape[0]:
        raise ConfigError(f"cannot keep {n_keep} of {obj.shape[0]} proposals")
    order = np.lexsort((np.arange(obj.shape[0]), -obj))
    return order[:n_keep]


@dataclass
class AlignedGroup:
    """Canonically aligned support points for a batch of detections.

    `indices` are proposal ids, `positions` the rows of the selection the
    aligner was given (so callers can map back to their box lists after empty
    neighborhoods were dropped). Padded rows cycle real points, so `point_ids`
    always index the source cloud; `valid` marks the non-cycled rows.
    """

    indices: np.ndarray  # (D,) proposal ids
    positions: np.ndarray  # (D,) rows into the caller's selection
    points: Tensor  # (D, M, 3) aligned coordinates
    point_ids: np.ndarray  # (D, M) source point indices
    valid: np.ndarray  # (D, M) bool
    features: Tensor  # (D, F) proposal features
    scale: Tensor  # (D, 3) predicted box extents

    @property
    def n_detections(self) -> int:
        return self.indices.shape[0]

    def subset(self, rows: np.ndarray) -> "AlignedGroup":
        rows = np.asarray(rows, dtype=np.int64)
        d, m, _ = self.points.shape
        flat = ops.reshape(self.points, (d, m * 3))
        return AlignedGroup(
            indices=self.indices[rows],
            positions=self.positions[rows],
            points=ops.reshape(ops.take_rows(flat, rows), (rows.size, m, 3)),
            point_ids=self.point_ids[rows],
            valid=self.valid[rows],
            features=ops.take_rows(self.features, rows),
            scale=ops.take_rows(self.scale, rows),
        )


class CanonicalAlignment(Module):
    """Groups scene points around detections and aligns them into box frames."""

    def __init__(self, rng: np.random.Generator, radius: float = 1.0, m_points: int = 1024,
                 feature_dim: int = 128):
        super().__init__()
        self.radius = radius
        self.m_points = m_points
        self.feature_dim = feature_dim
        self.encoder = MLP([3, 64, 128, 256], rng)
        self.head = MLP([256, 128, 12], rng, zero_init_last=True)

    def forward(self, points: np.ndarray, out: DetectionOutput, heading: Tensor,
                scale: Tensor, idx: np.ndarray) -> AlignedGroup | None:
        """Align clouds for the proposals in `idx`.

        `heading`/`scale` are (P,) and (P, 3) tensors for all proposals.
        Detections whose neighborhood is empty are dropped; returns None when
        nothing survives (or when batch norm could not train on the survivors).
        """
        idx = np.asarray(idx, dtype=np.int64)
        points = np.asarray(points, dtype=np.float64)
        centers = out.center.data[idx].astype(np.float64)
        clusters = ball_query_group(points, centers, self.radius, self.m_points, order="index")
        kept = np.array([d for d, c in enumerate(clusters) if not c.empty], dtype=np.int64)
        if kept.size == 0 or (self.training and kept.size < 2):
            return None
        idx = idx[kept]
        clusters = [clusters[d] for d in kept]
        d_n, m = idx.shape[0], self.m_points

        theta = ops.take_rows(heading, idx)
        rigid = []
        cloud_rows = []
        rot_ts = []
        for d in range(d_n):
            pts = constant(clusters[d].points.astype(default_dtype()))
            cloud_rows.append(pts)
            rot_t = rotation_t_from_heading(ops.take_rows(theta, np.array([d])))
            rot_ts.append(rot_t)
            rigid.append(align_rows(pts, ops.take_rows(out.center, idx[d:d + 1]), rot_t))

        h = self.encoder(ops.concat(rigid, axis=0))
        pooled = ops.max_pool_points(ops.reshape(h, (d_n, m, h.shape[-1])))
        adjust = self.head(pooled)

        aligned = []
        for d in range(d_n):
            row = ops.take_rows(adjust, np.array([d]))
            delta_rot = ops.reshape(ops.narrow(row, 0, 9), (3, 3))
            delta_c = ops.narrow(row, 9, 12)
            aligned.append(align_rows(cloud_rows[d], ops.take_rows(out.center, idx[d:d + 1]),
                                      rot_ts[d], delta_rot=delta_rot, delta_c=delta_c))

        return AlignedGroup(
            indices=idx,
            positions=kept,
            points=ops.reshape(ops.concat(aligned, axis=0), (d_n, m, 3)),
            point_ids=np.stack([c.indices for c in clusters]),
            valid=np.stack([c.valid for c in clusters]),
            features=ops.take_rows(out.features, idx),
            scale=ops.take_rows(scale, idx),
        )
