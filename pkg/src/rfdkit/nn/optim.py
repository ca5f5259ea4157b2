"""Optimizers. State is exposed as named float arrays for checkpointing."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeMismatchError
from .tensor import Parameter


class Optimizer:
    def __init__(self, params: list[Parameter], lr: float):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = [p for p in params if p.trainable]
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        if state:
            raise ShapeMismatchError("this optimizer carries no state")


class SGD(Optimizer):
    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - p.data.dtype.type(self.lr) * p.grad


class Adam(Optimizer):
    def __init__(self, params: list[Parameter], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self._m[i] = b1 * self._m[i] + (1.0 - b1) * g
            self._v[i] = b2 * self._v[i] + (1.0 - b2) * (g * g)
            m_hat = self._m[i] / bc1
            v_hat = self._v[i] / bc2
            p.data = p.data - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.asarray([self.t], dtype=np.float32)}
        for i, _ in enumerate(self.params):
            out[f"adam.m.{i}"] = self._m[i]
            out[f"adam.v.{i}"] = self._v[i]
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        try:
            self.t = int(state["adam.t"][0])
            for i, p in enumerate(self.params):
                m = np.asarray(state[f"adam.m.{i}"], dtype=p.data.dtype)
                v = np.asarray(state[f"adam.v.{i}"], dtype=p.data.dtype)
                if m.shape != p.data.shape or v.shape != p.data.shape:
                    raise ShapeMismatchError(f"optimizer state {i} shape mismatch")
                self._m[i] = m.copy()
                self._v[i] = v.copy()
        except KeyError as exc:
            raise ShapeMismatchError(f"optimizer state missing entry {exc}") from exc
