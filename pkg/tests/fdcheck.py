"""Finite-difference gradient oracle shared by the nn test modules.

Central differences with h = 1e-4 in float64; analytic gradients must match
to a relative error below 1e-5 (looser bounds are passed explicitly where a
test checks a full pipeline rather than one layer).
"""

from __future__ import annotations

import numpy as np

import rfdkit.nn as nn


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    denom = max(abs(a), abs(b), floor)
    return abs(a - b) / denom


def assert_grads_match(loss_fn, params, h: float = 1e-4, tol: float = 1e-5,
                       max_probes: int = 24, rng: np.random.Generator | None = None) -> None:
    """Compare analytic grads of loss_fn() against central differences.

    loss_fn must rebuild the graph from the given leaf tensors on every call,
    reading their current .data. Large parameters are probed at a random
    entry subset.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = loss_fn()
    assert loss.data.size == 1
    nn.backward(loss)
    for p in params:
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_probes:
            probe = np.arange(n)
        else:
            probe = rng.choice(n, size=max_probes, replace=False)
        for i in probe:
            old = flat[i]
            flat[i] = old + h
            f_plus = float(loss_fn().data)
            flat[i] = old - h
            f_minus = float(loss_fn().data)
            flat[i] = old
            fd = (f_plus - f_minus) / (2.0 * h)
            an = float(grad.reshape(-1)[i])
            if abs(fd) < 1e-10 and abs(an) < 1e-10:
                continue
            err = rel_err(an, fd)
            assert err < tol, (
                f"gradient mismatch at flat index {i} of tensor shape {p.data.shape}: "
                f"analytic {an:.10g} vs finite-diff {fd:.10g} (rel err {err:.3g})"
            )
