"""Loss functions as fused ops with hand-derived backward passes.

Classification losses reduce by mean over (selected) batch rows; smooth-L1
sums trailing feature dims before the row mean. Optional boolean masks
restrict the reduction to a row subset (target assignment produces ignore
rows); an empty selection yields a constant zero so the term drops out.
"""

from __future__ import annotations

import numpy as np

from ..errors import GraphError, NumericsError
from .tensor import Tensor, make_op
from .ops import softmax_np


def _zero_like_scalar(t: Tensor) -> Tensor:
    return Tensor(np.zeros((), dtype=t.data.dtype))


def softmax_cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean cross entropy of integer labels under softmax(logits) rows."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.data.shape[0],):
        raise GraphError(
            f"softmax_cross_entropy expects (N,C) logits and (N,) labels, got {logits.shape}, {labels.shape}"
        )
    if mask is None:
        sel = np.arange(logits.data.shape[0])
    else:
        sel = np.flatnonzero(np.asarray(mask, dtype=bool))
    if sel.size == 0:
        return _zero_like_scalar(logits)
    x = logits.data[sel]
    y = labels[sel]
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    nll = (logz.squeeze(1) - shifted[np.arange(sel.size), y]).mean()
    out = np.asarray(nll, dtype=logits.data.dtype)

    def vjp(g):
        probs = softmax_np(x, axis=1)
        probs[np.arange(sel.size), y] -= 1.0
        full = np.zeros_like(logits.data)
        full[sel] = probs * (g / sel.size)
        return (full,)

    return make_op("softmax_cross_entropy", out, (logits,), vjp)


def smooth_l1(pred: Tensor, target, mask=None, beta: float = 1.0) -> Tensor:
    """Huber with transition `beta`: sum over feature dims, mean over rows."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise GraphError(f"smooth_l1 target shape {target.shape} != pred {pred.shape}")
    n_rows = pred.data.shape[0]
    if mask is None:
        sel = np.arange(n_rows)
    else:
        sel = np.flatnonzero(np.asarray(mask, dtype=bool))
    if sel.size == 0:
        return _zero_like_scalar(pred)
    d = pred.data[sel] - target[sel]
    ad = np.abs(d)
    per = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    value = per.reshape(sel.size, -1).sum(axis=1).mean()
    out = np.asarray(value, dtype=pred.data.dtype)

    def vjp(g):
        de = np.clip(d / beta, -1.0, 1.0)
        full = np.zeros_like(pred.data)
        full[sel] = de * (g / sel.size)
        return (full,)

    return make_op("smooth_l1", out, (pred,), vjp)


def binary_cross_entropy(probs: Tensor, targets, reduction: str = "mean") -> Tensor:
    """BCE on probabilities in (0,1). Prefer bce_with_logits upstream of a sigmoid."""
    targets = np.asarray(targets, dtype=probs.data.dtype)
    if targets.shape != probs.data.shape:
        raise GraphError(f"binary_cross_entropy target shape {targets.shape} != {probs.shape}")
    eps = 1e-12 if probs.data.dtype == np.float64 else 1e-7
    p = np.clip(probs.data, eps, 1.0 - eps)
    per = -(targets * np.log(p) + (1.0 - targets) * np.log1p(-p))
    out, scale = _reduce(per, reduction, probs.data.dtype)

    def vjp(g):
        return ((p - targets) / (p * (1.0 - p)) * (g * scale),)

    return make_op("binary_cross_entropy", out, (probs,), vjp)


def bce_with_logits(logits: Tensor, targets, reduction: str = "none") -> Tensor:
    """Numerically stable sigmoid + BCE in one op."""
    targets = np.asarray(targets, dtype=logits.data.dtype)
    if targets.shape != logits.data.shape:
        raise GraphError(f"bce_with_logits target shape {targets.shape} != {logits.shape}")
    x = logits.data
    per = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    out, scale = _reduce(per, reduction, logits.data.dtype)

    def vjp(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return ((s - targets) * (g * scale),)

    return make_op("bce_with_logits", out, (logits,), vjp)


def kl_diag_gaussian_vs_std_normal(mu: Tensor, sigma: Tensor, reduction: str = "mean") -> Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)) = 0.5 * sum_dims(mu^2 + sigma^2 - 1 - ln sigma^2).

    reduction "mean": mean over batch rows; "none": per-row values.
    """
    if mu.data.shape != sigma.data.shape or mu.data.ndim != 2:
        raise GraphError(f"kl expects matching (N,L) mu/sigma, got {mu.shape}, {sigma.shape}")
    if np.any(sigma.data <= 0.0):
        raise NumericsError("kl needs strictly positive sigma")
    s = sigma.data
    per_row = 0.5 * (mu.data**2 + s**2 - 1.0 - 2.0 * np.log(s)).sum(axis=1)
    n = mu.data.shape[0]
    if reduction == "mean":
        out = np.asarray(per_row.mean(), dtype=mu.data.dtype)

        def vjp(g):
            w = g / n
            return mu.data * w, (s - 1.0 / s) * w

    elif reduction == "none":
        out = per_row.astype(mu.data.dtype)

        def vjp(g):
            w = g[:, None]
            return mu.data * w, (s - 1.0 / s) * w

    else:
        raise GraphError(f"unknown reduction {reduction!r}")
    return make_op("kl_diag_gaussian_vs_std_normal", out, (mu, sigma), vjp)


def _reduce(per: np.ndarray, reduction: str, dtype):
    """Return (reduced value, d(value)/d(per-element))."""
    if reduction == "mean":
        return np.asarray(per.mean(), dtype=dtype), 1.0 / per.size
    if reduction == "sum":
        return np.asarray(per.sum(), dtype=dtype), 1.0
    if reduction == "none":
        return per.astype(dtype, copy=False), 1.0
    raise GraphError(f"unknown reduction {reduction!r}")
