"""Vote-based 3-D object detector.

A two-stage set-abstraction backbone turns a raw point cloud into seed
features, each seed casts a vote (a spatial offset plus a feature residual)
toward the center of the object it belongs to, and votes are clustered into
proposals. A shared head decodes every proposal into objectness, a center
refinement, a binned heading, a template-anchored scale, and a class score.

Grouping (farthest point sampling, ball queries) runs on plain arrays and is
treated as data-side: gradients flow through gathered coordinates and
features, not through the selection indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DataError, ShapeMismatchError
from ..geometry import (
    OrientedBox,
    ball_query_group,
    farthest_point_sample,
    nearest_gt_centers,
    nms_3d,
    wrap_angle,
)
from ..nn import losses, ops
from ..nn.layers import MLP, Module
from ..nn.ops import softmax_np
from ..nn.tensor import Tensor, constant, default_dtype

N_CLASSES = 8
N_HEADING_BINS = 12
HEADING_BIN_WIDTH = 2.0 * np.pi / N_HEADING_BINS

POSITIVE_RADIUS = 0.3
NEGATIVE_RADIUS = 0.6

# head channel layout: [objectness 2 | center 3 | heading bins | heading
# residuals | template scores | template residuals 3 each | class scores]
_OBJ = slice(0, 2)
_CENTER = slice(2, 5)
_HBIN = slice(5, 5 + N_HEADING_BINS)
_HRES = slice(_HBIN.stop, _HBIN.stop + N_HEADING_BINS)
_TMPL = slice(_HRES.stop, _HRES.stop + N_CLASSES)
_TRES = slice(_TMPL.stop, _TMPL.stop + 3 * N_CLASSES)
_SEM = slice(_TRES.stop, _TRES.stop + N_CLASSES)
HEAD_CHANNELS = _SEM.stop


def heading_bin_anchors() -> np.ndarray:
    return -np.pi + np.arange(N_HEADING_BINS) * HEADING_BIN_WIDTH


def encode_heading(theta: float) -> tuple[int, float]:
    """Containing bin index and the residual past its anchor.

    Bin k spans [-pi + k*w, -pi + (k+1)*w); decode is anchor + residual, so
    residuals are nonnegative and below the bin width.
    """
    theta = wrap_angle(theta)
    k = int(np.floor((theta + np.pi) / HEADING_BIN_WIDTH))
    k = min(max(k, 0), N_HEADING_BINS - 1)
    res = theta - (-np.pi + k * HEADING_BIN_WIDTH)
    return k, float(res)


def pack_clusters(clusters, centers: np.ndarray, strict: bool = True):
    """Stack ball-query clusters into (S, m) arrays of rel-coords/indices/valid."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    m = clusters[0].indices.shape[0]
    rel = np.zeros((len(clusters), m, 3))
    idx = np.zeros((len(clusters), m), dtype=np.int64)
    valid = np.zeros((len(clusters), m), dtype=bool)
    for i, c in enumerate(clusters):
        if c.empty:
            if strict:
                raise DataError(f"empty neighborhood around center {i}")
            continue
        rel[i] = c.points - centers[i]
        idx[i] = c.indices
        valid[i] = c.valid
    return rel.astype(default_dtype()), idx, valid


class SetAbstraction(Module):
    """Pointwise MLP over grouped neighbors followed by a masked feature max."""

    def __init__(self, in_features: int, mlp_dims: Sequence[int], rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.mlp = MLP([in_features + 3, *mlp_dims], rng)

    def forward(self, rel: np.ndarray, features: Tensor | None, idx: np.ndarray,
                valid: np.ndarray) -> Tensor:
        s, m, _ = rel.shape
        x = constant(rel.reshape(s * m, 3))
        if features is not None:
            if features.shape[1] != self.in_features:
                raise ShapeMismatchError(
                    f"expected {self.in_features} neighbor features, got {features.shape[1]}")
            x = ops.concat([x, ops.take_rows(features, idx.reshape(-1))], axis=1)
        h = self.mlp(x)
        h = ops.reshape(h, (s, m, h.shape[-1]))
        # padded rows must not win the max
        penalty = np.where(valid, 0.0, -1e9).astype(default_dtype())[:, :, None]
        return ops.max_pool_points(h + constant(penalty))


class Backbone(Module):
    """Two set-abstraction stages producing per-seed features.

    Stage one aggregates raw points around farthest-point-sampled seeds,
    carrying absolute height as the one non-relative input so floor points
    are separable from elevated surfaces. Stage two re-aggregates the seed
    features among themselves at an object-scale radius, wide enough for a
    seed to see which side of its object it sits on. Groupings depend only
    on the input cloud, so `prepare` caches them once per scene.
    """

    def __init__(self, rng: np.random.Generator, n_seeds: int = 1024,
                 sa1_radius: float = 0.2, sa1_k: int = 32,
                 sa2_radius: float = 0.9, sa2_k: int = 32):
        super().__init__()
        self.n_seeds = n_seeds
        self.sa1_radius = sa1_radius
        self.sa1_k = sa1_k
        self.sa2_radius = sa2_radius
        self.sa2_k = sa2_k
        self.sa1 = SetAbstraction(1, [64, 64, 128], rng)
        self.sa2 = SetAbstraction(128, [128, 128], rng)

    def prepare(self, points: np.ndarray) -> dict:
        points = np.asarray(points, dtype=np.float64)
        seed_idx = farthest_point_sample(points, self.n_seeds)
        seeds = points[seed_idx]
        g1 = ball_query_group(points, seeds, self.sa1_radius, self.sa1_k, order="canonical")
        g2 = ball_query_group(seeds, seeds, self.sa2_radius, self.sa2_k, order="canonical")
        return {
            "seed_idx": seed_idx,
            "seed_xyz": seeds,
            "height": points[:, 2:3].astype(default_dtype()),
            "sa1": pack_clusters(g1, seeds),
            "sa2": pack_clusters(g2, seeds),
        }

    def forward(self, cache: dict) -> tuple[np.ndarray, Tensor]:
        rel1, idx1, valid1 = cache["sa1"]
        rel2, idx2, valid2 = cache["sa2"]
        f1 = self.sa1(rel1, constant(cache["height"]), idx1, valid1)
        f2 = self.sa2(rel2, f1, idx2, valid2)
        return cache["seed_xyz"], f2


class VoteModule(Module):
    """Each seed predicts an offset to its object center and a feature residual."""

    def __init__(self, rng: np.random.Generator, feature_dim: int = 128):
        super().__init__()
        self.feature_dim = feature_dim
        # zero-init last layer: votes start at their seeds
        self.mlp = MLP([feature_dim, feature_dim, 3 + feature_dim], rng, zero_init_last=True)

    def forward(self, seed_xyz: np.ndarray, seed_features: Tensor) -> tuple[Tensor, Tensor]:
        out = self.mlp(seed_features)
        delta_xyz = ops.narrow(out, 0, 3)
        delta_f = ops.narrow(out, 3, 3 + self.feature_dim)
        vote_xyz = constant(seed_xyz.astype(default_dtype())) + delta_xyz
        return vote_xyz, seed_features + delta_f


class ProposalModule(Module):
    """Clusters votes and decodes one box parameterization per cluster."""

    def __init__(self, rng: np.random.Generator, n_proposals: int = 256,
                 radius: float = 0.3, k: int = 16, feature_dim: int = 128):
        super().__init__()
        self.n_proposals = n_proposals
        self.radius = radius
        self.k = k
        self.encoder = MLP([3 + feature_dim, feature_dim, feature_dim], rng)
        # zero-init last layer: boxes decode to cluster center + template scale
        self.head = MLP([feature_dim, feature_dim, HEAD_CHANNELS], rng, zero_init_last=True)

    def forward(self, vote_xyz: Tensor, vote_features: Tensor):
        votes = vote_xyz.data.astype(np.float64)
        fps_idx = farthest_point_sample(votes, self.n_proposals)
        centers = votes[fps_idx]
        clusters = ball_query_group(votes, centers, self.radius, self.k, order="canonical")
        _, idx, valid = pack_clusters(clusters, centers)
        p, m = idx.shape
        # rel coords gathered from the vote tensor so center gradients reach the votes
        gathered = ops.take_rows(vote_xyz, idx.reshape(-1))
        rel = gathered - constant(np.repeat(centers, m, axis=0).astype(default_dtype()))
        x = ops.concat([rel, ops.take_rows(vote_features, idx.reshape(-1))], axis=1)
        h = self.encoder(x)
        h = ops.reshape(h, (p, m, h.shape[-1]))
        penalty = np.where(valid, 0.0, -1e9).astype(default_dtype())[:, :, None]
        pooled = ops.max_pool_points(h + constant(penalty))
        return centers, pooled, self.head(pooled)


@dataclass
class DetectionOutput:
    """Raw and decoded detector outputs for one scene.

    `centers` are the vote-cluster positions (data-side); `center` is the
    decoded box center tensor. Heading and scale stay factored as bin/template
    scores plus residuals; helpers below assemble them for chosen indices.
    """

    centers: np.ndarray  # (P, 3) float64 cluster centers
    features: Tensor  # (P, F) pooled proposal features
    obj_logits: Tensor  # (P, 2)
    center: Tensor  # (P, 3)
    heading_bin_logits: Tensor  # (P, B)
    heading_residuals: Tensor  # (P, B) radians
    template_logits: Tensor  # (P, T)
    scale_residuals: Tensor  # (P, 3T) log-space
    sem_logits: Tensor  # (P, T)
    vote_xyz: Tensor  # (S, 3)
    seed_xyz: np.ndarray  # (S, 3)

    @property
    def n_proposals(self) -> int:
        return self.centers.shape[0]

    def objectness(self) -> np.ndarray:
        return softmax_np(self.obj_logits.data, axis=1)[:, 1]

    def predicted_heading_bins(self) -> np.ndarray:
        return np.argmax(self.heading_bin_logits.data, axis=1)

    def predicted_templates(self) -> np.ndarray:
        return np.argmax(self.template_logits.data, axis=1)

    def heading_for(self, bins: np.ndarray) -> Tensor:
        """(P,) heading tensor for the given bin of each proposal."""
        anchors = heading_bin_anchors()[bins].astype(default_dtype())
        return constant(anchors) + ops.gather_cols(self.heading_residuals, bins)

    def scale_residuals_for(self, templates: np.ndarray) -> Tensor:
        p = self.n_proposals
        flat = ops.reshape(self.scale_residuals, (p * N_CLASSES, 3))
        return ops.take_rows(flat, np.arange(p) * N_CLASSES + np.asarray(templates))

    def scale_for(self, templates: np.ndarray, template_scales: np.ndarray) -> Tensor:
        """(P, 3) scale tensor: template anchor times exp(residual)."""
        anchors = template_scales[np.asarray(templates)].astype(default_dtype())
        return constant(anchors) * ops.exp(self.scale_residuals_for(templates))


def split_head(centers: np.ndarray, features: Tensor, head_out: Tensor,
               vote_xyz: Tensor, seed_xyz: np.ndarray) -> DetectionOutput:
    offset = ops.narrow(head_out, _CENTER.start, _CENTER.stop)
    return DetectionOutput(
        centers=centers,
        features=features,
        obj_logits=ops.narrow(head_out, _OBJ.start, _OBJ.stop),
        center=constant(centers.astype(default_dtype())) + offset,
        heading_bin_logits=ops.narrow(head_out, _HBIN.start, _HBIN.stop),
        heading_residuals=ops.narrow(head_out, _HRES.start, _HRES.stop),
        template_logits=ops.narrow(head_out, _TMPL.start, _TMPL.stop),
        scale_residuals=ops.narrow(head_out, _TRES.start, _TRES.stop),
        sem_logits=ops.narrow(head_out, _SEM.start, _SEM.stop),
        vote_xyz=vote_xyz,
        seed_xyz=seed_xyz,
    )


class Detector(Module):
    """Backbone + votes + proposals. `prepare` caches scene groupings."""

    def __init__(self, rng: np.random.Generator, n_seeds: int = 1024,
                 n_proposals: int = 256, template_scales: np.ndarray | None = None):
        super().__init__()
        self.backbone = Backbone(rng, n_seeds=n_seeds)
        self.votes = VoteModule(rng)
        self.proposals = ProposalModule(rng, n_proposals=n_proposals)
        if template_scales is None:
            template_scales = np.ones((N_CLASSES, 3))
        if template_scales.shape != (N_CLASSES, 3):
            raise ShapeMismatchError(
                f"template scales must be ({N_CLASSES}, 3), got {template_scales.shape}")
        self.register_buffer("template_scales", np.asarray(template_scales, dtype=np.float64))

    def prepare(self, points: np.ndarray, instance_ids: np.ndarray | None = None) -> dict:
        cache = self.backbone.prepare(points)
        if instance_ids is not None:
            cache["seed_instances"] = np.asarray(instance_ids)[cache["seed_idx"]]
        return cache

    def forward(self, cache: dict) -> DetectionOutput:
        seed_xyz, seed_features = self.backbone(cache)
        vote_xyz, vote_features = self.votes(seed_xyz, seed_features)
        centers, pooled, head_out = self.proposals(vote_xyz, vote_features)
        return split_head(centers, pooled, head_out, vote_xyz, seed_xyz)


def template_scales_from_boxes(boxes: Sequence[OrientedBox],
                               n_classes: int = N_CLASSES) -> np.ndarray:
    """Per-class mean extents over a box collection; unseen classes get ones."""
    out = np.ones((n_classes, 3))
    sums = np.zeros((n_classes, 3))
    counts = np.zeros(n_classes, dtype=np.int64)
    for b in boxes:
        if not 0 <= b.label < n_classes:
            raise DataError(f"box label {b.label} outside [0, {n_classes})")
        sums[b.label] += b.scale
        counts[b.label] += 1
    seen = counts > 0
    out[seen] = sums[seen] / counts[seen, None]
    return out


@dataclass
class DetectionTargets:
    """Per-proposal regression/classification targets plus per-seed vote targets.

    Rows outside `pos_mask` carry zeros for the regression fields; the loss
    masks select what contributes. `matched_gt` indexes the scene's box list
    for every proposal (nearest center), valid only where `pos_mask` is set.
    """

    obj_label: np.ndarray  # (P,) int, 1 near an object center
    obj_mask: np.ndarray  # (P,) bool, positives and negatives only
    pos_mask: np.ndarray  # (P,) bool
    matched_gt: np.ndarray  # (P,) int
    center: np.ndarray  # (P, 3)
    heading_bin: np.ndarray  # (P,) int
    heading_residual: np.ndarray  # (P,)
    template: np.ndarray  # (P,) int
    scale_residual: np.ndarray  # (P, 3)
    sem_label: np.ndarray  # (P,) int
    vote_mask: np.ndarray  # (S,) bool, seeds on object surfaces
    vote_target: np.ndarray  # (S, 3) owning object center


def assign_targets(centers: np.ndarray, seed_xyz: np.ndarray, seed_instances: np.ndarray,
                   boxes: Sequence[OrientedBox], template_scales: np.ndarray) -> DetectionTargets:
    """Match proposals to ground truth by center distance.

    Proposals closer than POSITIVE_RADIUS to their nearest box center are
    positive, farther than NEGATIVE_RADIUS negative, anything between is
    ignored. `boxes` must be ordered by instance id (instance i -> boxes[i-1])
    so seed instance ids index vote targets.
    """
    if len(boxes) == 0:
        raise DataError("target assignment needs at least one ground-truth box")
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    p = centers.shape[0]
    gt_centers = np.stack([b.center for b in boxes])
    matched, dist = nearest_gt_centers(centers, gt_centers)
    pos = dist < POSITIVE_RADIUS
    neg = dist > NEGATIVE_RADIUS

    center_t = np.zeros((p, 3))
    hbin = np.zeros(p, dtype=np.int64)
    hres = np.zeros(p)
    tmpl = np.zeros(p, dtype=np.int64)
    sres = np.zeros((p, 3))
    sem = np.zeros(p, dtype=np.int64)
    for i in np.flatnonzero(pos):
        b = boxes[matched[i]]
        center_t[i] = b.center
        hbin[i], hres[i] = encode_heading(b.heading)
        tmpl[i] = b.label
        sres[i] = np.log(b.scale / template_scales[b.label])
        sem[i] = b.label

    seed_instances = np.asarray(seed_instances).reshape(-1)
    vote_mask = seed_instances > 0
    if seed_instances.max(initial=0) > len(boxes):
        raise DataError("seed instance id exceeds the box list")
    # votes regress toward the nearest object center; only surface seeds count
    vote_target = np.array(seed_xyz, dtype=np.float64, copy=True)
    nearest, _ = nearest_gt_centers(seed_xyz[vote_mask], gt_centers)
    vote_target[vote_mask] = gt_centers[nearest]

    return DetectionTargets(
        obj_label=pos.astype(np.int64),
        obj_mask=pos | neg,
        pos_mask=pos,
        matched_gt=matched,
        center=center_t,
        heading_bin=hbin,
        heading_residual=hres,
        template=tmpl,
        scale_residual=sres,
        sem_label=sem,
        vote_mask=vote_mask,
        vote_target=vote_target,
    )


LOSS_WEIGHTS = {
    "vote": 1.0, "center": 1.0, "heading": 1.0, "scale": 1.0,
    "cls": 0.1, "semantic": 0.1, "objectness": 0.5,
}


def box_loss(out: DetectionOutput, targets: DetectionTargets,
             weights: dict | None = None) -> tuple[Tensor, dict]:
    """Weighted detection loss.

    vote + center + (0.1 cls + reg) for heading and scale + 0.1 class +
    0.5 objectness by default; `weights` overrides individual terms ("cls"
    scales the bin and template classification parts inside the heading and
    scale terms). Regression terms are smooth-L1 against the residual of the
    ground-truth bin/template, masked to positive proposals.
    """
    w = dict(LOSS_WEIGHTS)
    if weights:
        unknown = set(weights) - set(w)
        if unknown:
            raise ConfigError(f"unknown loss weight keys: {sorted(unknown)}")
        w.update(weights)
    pos = targets.pos_mask
    l_vote = losses.smooth_l1(out.vote_xyz, targets.vote_target, mask=targets.vote_mask)
    l_obj = losses.softmax_cross_entropy(out.obj_logits, targets.obj_label, mask=targets.obj_mask)
    l_center = losses.smooth_l1(out.center, targets.center, mask=pos)
    l_hcls = losses.softmax_cross_entropy(out.heading_bin_logits, targets.heading_bin, mask=pos)
    hres_pred = ops.gather_cols(out.heading_residuals, targets.heading_bin)
    l_hreg = losses.smooth_l1(hres_pred, targets.heading_residual, mask=pos)
    l_tcls = losses.softmax_cross_entropy(out.template_logits, targets.template, mask=pos)
    sres_pred = out.scale_residuals_for(targets.template)
    l_sreg = losses.smooth_l1(sres_pred, targets.scale_residual, mask=pos)
    l_sem = losses.softmax_cross_entropy(out.sem_logits, targets.sem_label, mask=pos)

    total = (w["vote"] * l_vote + w["center"] * l_center
             + w["heading"] * (w["cls"] * l_hcls + l_hreg)
             + w["scale"] * (w["cls"] * l_tcls + l_sreg)
             + w["semantic"] * l_sem + w["objectness"] * l_obj)
    parts = {
        "vote": l_vote.item(), "objectness": l_obj.item(), "center": l_center.item(),
        "heading_cls": l_hcls.item(), "heading_reg": l_hreg.item(),
        "scale_cls": l_tcls.item(), "scale_reg": l_sreg.item(), "semantic": l_sem.item(),
    }
    return total, parts


def predicted_boxes(out: DetectionOutput, template_scales: np.ndarray,
                    min_objectness: float = 0.5, nms_iou: float = 0.25) -> tuple[list[OrientedBox], np.ndarray]:
    """Decode confident proposals into scored boxes (objectness cut + NMS).

    Returns the boxes and the proposal index each one came from. The score is
    objectness times the semantic probability of the argmax class.
    """
    obj = out.objectness()
    keep = np.flatnonzero(obj > min_objectness)
    if keep.size == 0:
        return [], np.zeros(0, dtype=np.int64)
    bins = out.predicted_heading_bins()
    tmpl = out.predicted_templates()
    headings = out.heading_for(bins).data
    scales = out.scale_for(tmpl, template_scales).data
    sem = softmax_np(out.sem_logits.data, axis=1)
    labels = np.argmax(sem, axis=1)
    boxes = []
    for i in keep:
        score = float(obj[i] * sem[i, labels[i]])
        boxes.append(OrientedBox(out.center.data[i].astype(np.float64),
                                 scales[i].astype(np.float64), float(headings[i]),
                                 label=int(labels[i]), score=score))
    kept = nms_3d(boxes, nms_iou)
    return [boxes[i] for i in kept], keep[np.asarray(kept, dtype=np.int64)]
