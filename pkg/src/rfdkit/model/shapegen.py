"""Occupancy shape generation conditioned on aligned detections.

The aligned support cloud is normalized by the predicted box extents, a
segmentation branch soft-masks away points that do not belong to the object,
and a residual PointNet encodes the survivors into a global feature. During
training a latent encoder ingests query/occupancy pairs and the global
feature to produce a diagonal Gaussian posterior; the decoder maps query
points plus the latent/feature condition through conditioned batch norm
blocks to occupancy logits. At generation time the latent is zero.

Encoder input variants ablate the conditioning: "full" is masked coordinates
plus the proposal feature, "c1" drops the coordinates, "c2" drops the
feature, "c3" keeps both but skips the segmentation mask.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..nn import losses, ops
from ..nn.layers import MLP, ConditionalBatchNorm, Linear, Module
from ..nn.tensor import Tensor, constant, default_dtype
from .alignment import AlignedGroup

VARIANTS = ("full", "c1", "c2", "c3")


def _broadcast_points(per_object: Tensor, m: int) -> Tensor:
    """(D, F) -> (D, M, F) by broadcast against a zero (1, M, 1) constant."""
    d, f = per_object.shape
    pad = constant(np.zeros((1, m, 1), dtype=default_dtype()))
    return ops.reshape(per_object, (d, 1, f)) + pad


class ResidualBlock(Module):
    """x + fc2(relu(fc1(x))) on trailing-feature rows."""

    def __init__(self, width: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(width, width, rng)
        self.fc2 = Linear(width, width, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.fc2(ops.relu(self.fc1(x)))


class ConditionedResidualBlock(Module):
    """Pre-activation residual block on (B, C, K) with conditioned batch norm."""

    def __init__(self, width: int, cond_dim: int, rng: np.random.Generator):
        super().__init__()
        self.cbn1 = ConditionalBatchNorm(width, cond_dim, rng)
        self.cbn2 = ConditionalBatchNorm(width, cond_dim, rng)
        self.fc1 = Linear(width, width, rng)
        self.fc2 = Linear(width, width, rng)

    def _pointwise(self, fc: Linear, x: Tensor) -> Tensor:
        return ops.transpose(fc(ops.transpose(x, (0, 2, 1))), (0, 2, 1))

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        h = self._pointwise(self.fc1, ops.relu(self.cbn1(x, cond)))
        h = self._pointwise(self.fc2, ops.relu(self.cbn2(h, cond)))
        return x + h


class ShapeGenerator(Module):
    """Denoise, encode, and decode one aligned detection batch into occupancy."""

    def __init__(self, rng: np.random.Generator, variant: str = "full",
                 proposal_dim: int = 128, feature_dim: int = 512, latent_dim: int = 32,
                 width: int = 128, n_blocks: int = 5, seg_weight: float = 100.0):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown encoder variant {variant!r}, expected one of {VARIANTS}")
        self.variant = variant
        self.proposal_dim = proposal_dim
        self.feature_dim = feature_dim
        self.latent_dim = latent_dim
        self.width = width
        self.seg_weight = seg_weight

        self.seg_point = MLP([3, 64, 128], rng)
        self.seg_head = MLP([256, 128, 1], rng)

        enc_in = {"full": 3 + proposal_dim, "c1": proposal_dim, "c2": 3,
                  "c3": 3 + proposal_dim}[variant]
        self.enc_point = MLP([enc_in, width, width], rng)
        self.enc_res1 = ResidualBlock(width, rng)
        self.enc_res2 = ResidualBlock(width, rng)
        self.enc_out = Linear(width, feature_dim, rng)

        self.lat_point = MLP([3 + 1 + feature_dim, width, width], rng)
        self.lat_mu = Linear(width, latent_dim, rng)
        self.lat_logsigma = Linear(width, latent_dim, rng)

        self.dec_point = Linear(3, width, rng)
        self.dec_z = Linear(latent_dim, width, rng)
        for i in range(n_blocks):
            setattr(self, f"dec_block{i}", ConditionedResidualBlock(width, feature_dim, rng))
        self.n_blocks = n_blocks
        self.dec_bn = ConditionalBatchNorm(width, feature_dim, rng)
        self.dec_out = Linear(width, 1, rng)

    # -- encoding --------------------------------------------------------------

    def encode(self, group: AlignedGroup) -> tuple[Tensor, Tensor]:
        """Global shape features (D, F) and segmentation logits (D, M)."""
        d, m, _ = group.points.shape
        coords = group.points / ops.reshape(group.scale, (d, 1, 3))
        rows = ops.reshape(coords, (d * m, 3))

        h = self.seg_point(rows)
        pooled = ops.max_pool_points(ops.reshape(h, (d, m, h.shape[-1])))
        pooled_rows = ops.reshape(_broadcast_points(pooled, m), (d * m, pooled.shape[-1]))
        seg_logits = self.seg_head(ops.concat([h, pooled_rows], axis=1))

        mask = ops.relu(2.0 * ops.sigmoid(seg_logits) - 1.0)
        feat_rows = ops.reshape(_broadcast_points(group.features, m), (d * m, self.proposal_dim))
        if self.variant == "full":
            x = ops.concat([rows * mask, feat_rows], axis=1)
        elif self.variant == "c1":
            x = feat_rows
        elif self.variant == "c2":
            x = rows * mask
        else:  # c3: unmasked coordinates
            x = ops.concat([rows, feat_rows], axis=1)

        e = self.enc_point(x)
        e = self.enc_res2(self.enc_res1(e))
        e = self.enc_out(ops.relu(e))
        f_star = ops.max_pool_points(ops.reshape(e, (d, m, self.feature_dim)))
        return f_star, ops.reshape(seg_logits, (d, m))

    def posterior(self, queries: np.ndarray, occupancy: np.ndarray,
                  f_star: Tensor) -> tuple[Tensor, Tensor]:
        """Diagonal Gaussian over the latent from query/occupancy evidence."""
        if not self.training:
            raise ConfigError("posterior is a training-mode op; inference uses z = 0")
        d, k, _ = queries.shape
        q = constant(queries.reshape(d * k, 3).astype(default_dtype()))
        o = constant(occupancy.reshape(d * k, 1).astype(default_dtype()))
        f_rows = ops.reshape(_broadcast_points(f_star, k), (d * k, self.feature_dim))
        h = self.lat_point(ops.concat([q, o, f_rows], axis=1))
        pooled = ops.max_pool_points(ops.reshape(h, (d, k, self.width)))
        return self.lat_mu(pooled), ops.exp(self.lat_logsigma(pooled))

    # -- decoding --------------------------------------------------------------

    def decode(self, queries, f_star: Tensor, z: Tensor | None = None) -> Tensor:
        """Occupancy logits (D, K) for canonical-frame query points.

        The query embedding and the latent embedding share the block width and
        are summed per point; the residual blocks are conditioned on the shape
        code. A missing latent means z = 0 (the inference path).
        """
        if not isinstance(queries, Tensor):
            queries = constant(np.asarray(queries, dtype=default_dtype()))
        if z is None:
            z = constant(np.zeros((f_star.shape[0], self.latent_dim), dtype=default_dtype()))
        d, k, _ = queries.shape
        h = self.dec_point(ops.reshape(queries, (d * k, 3)))
        h = ops.reshape(h, (d, k, self.width)) + ops.reshape(self.dec_z(z), (d, 1, self.width))
        x = ops.transpose(h, (0, 2, 1))
        for i in range(self.n_blocks):
            x = getattr(self, f"dec_block{i}")(x, f_star)
        x = ops.relu(self.dec_bn(x, f_star))
        out = self.dec_out(ops.transpose(x, (0, 2, 1)))
        return ops.reshape(out, (d, k))

    def occupancy_probs(self, queries: np.ndarray, f_star_row: Tensor) -> np.ndarray:
        """Zero-latent occupancy probabilities for one detection's queries."""
        q = np.asarray(queries, dtype=default_dtype()).reshape(1, -1, 3)
        logits = self.decode(q, f_star_row)
        return ops.sigmoid(logits).data.reshape(-1)

    # -- training --------------------------------------------------------------

    def forward_train(self, group: AlignedGroup, fg_labels: np.ndarray, queries: np.ndarray,
                      occupancy: np.ndarray, eps: np.ndarray) -> tuple[Tensor, dict]:
        """Reconstruction + KL per object (mean over objects) + weighted segmentation.

        fg_labels (D, M) supervise the denoiser; queries/occupancy (D, K, ...)
        supervise the decoder under a latent sampled with the provided eps.
        """
        d, m, _ = group.points.shape
        f_star, seg_logits = self.encode(group)
        mu, sigma = self.posterior(queries, occupancy, f_star)
        z = mu + sigma * constant(eps.astype(default_dtype()))
        logits = self.decode(queries, f_star, z)

        rec = ops.sum(losses.bce_with_logits(logits, occupancy.astype(default_dtype()),
                                             reduction="none"), axis=1)
        kl = losses.kl_diag_gaussian_vs_std_normal(mu, sigma, reduction="none")
        per_object = ops.mean(rec + kl)
        seg = losses.bce_with_logits(ops.reshape(seg_logits, (d * m, 1)),
                                     fg_labels.reshape(d * m, 1).astype(default_dtype()),
                                     reduction="mean")
        total = per_object + self.seg_weight * seg
        parts = {
            "shape_rec": float(ops.mean(rec).item()),
            "shape_kl": float(ops.mean(kl).item()),
            "shape_seg": float(seg.item()),
        }
        return total, parts
