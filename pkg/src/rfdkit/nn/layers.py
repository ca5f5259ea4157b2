"""Modules: parameter containers plus the layers the pipeline is built from.

Modules auto-register Parameter/Module attributes, walk their tree for
state_dict/named_parameters, and carry a train/eval flag that batch norm
consults. Construction order is deterministic, so a model rebuilt from the
same seed has bitwise-identical initial parameters.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError
from . import ops
from .tensor import Parameter, Tensor, constant, default_dtype


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=default_dtype())
        object.__setattr__(self, name, self._buffers[name])

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name not in self._buffers:
            raise ShapeMismatchError(f"unknown buffer {name!r}")
        self._buffers[name] = np.asarray(value, dtype=self._buffers[name].dtype)
        object.__setattr__(self, name, self._buffers[name])

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            key = name
            if key in state:
                raise ShapeMismatchError(f"buffer {key!r} collides with a parameter name")
            state[key] = b
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        expected = set(own_params) | set(own_buffers)
        got = set(state)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ShapeMismatchError(f"state dict mismatch: missing={missing} unexpected={extra}")
        for name, p in own_params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ShapeMismatchError(f"parameter {name!r}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()
        # buffers live inside nested modules; walk the tree to set them in place
        self._load_buffers(state, "")

    def _load_buffers(self, state: dict[str, np.ndarray], prefix: str) -> None:
        for name in list(self._buffers):
            key = prefix + name
            arr = np.asarray(state[key], dtype=self._buffers[name].dtype)
            if arr.shape != self._buffers[name].shape:
                raise ShapeMismatchError(f"buffer {key!r}: shape {arr.shape} != {self._buffers[name].shape}")
            self.set_buffer(name, arr.copy())
        for cname, child in self._children.items():
            child._load_buffers(state, prefix + cname + ".")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def he_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = float(np.sqrt(6.0 / max(fan_in, 1)))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    """y = x @ W + b with W shaped (in_features, out_features)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            w = np.zeros((in_features, out_features))
        else:
            w = he_uniform(rng, in_features, (in_features, out_features))
        self.weight = Parameter(w, name="weight")
        self.bias = Parameter(np.zeros(out_features), name="bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        lead = None
        if x.ndim != 2:
            lead = x.shape[:-1]
            x = ops.reshape(x, (-1, x.shape[-1]))
        if x.shape[1] != self.in_features:
            raise ShapeMismatchError(f"Linear expected {self.in_features} input features, got {x.shape[1]}")
        y = ops.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        if lead is not None:
            y = ops.reshape(y, lead + (self.out_features,))
        return y


class BatchNorm(Module):
    """Batch normalization over rows of an (N, C) tensor.

    eps 1e-5; running stats update running = momentum*running + (1-momentum)*batch
    with biased batch variance. Eval mode normalizes with the running stats.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(num_features), name="gamma")
        self.beta = Parameter(np.zeros(num_features), name="beta")
        self.register_buffer("running_mean", np.zeros(num_features))
        self.register_buffer("running_var", np.ones(num_features))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.num_features:
            raise ShapeMismatchError(f"BatchNorm expected (N, {self.num_features}), got {x.shape}")
        if self.training:
            if x.shape[0] < 2:
                raise ShapeMismatchError("BatchNorm train mode needs at least 2 rows")
            mu = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            m = self.momentum
            self.set_buffer("running_mean", m * self.running_mean + (1.0 - m) * mu)
            self.set_buffer("running_var", m * self.running_var + (1.0 - m) * var)
            xhat = ops.normalize(x, axes=(0,), eps=self.eps)
        else:
            invstd = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - constant(self.running_mean)) * constant(invstd)
        return xhat * self.gamma + self.beta


class ConditionalBatchNorm(Module):
    """Batch norm over (B, C, K) whose scale/shift come from a condition vector.

    gamma(cond) and beta(cond) are linear maps from cond_dim to C. Their init
    (gamma map: zero weights, unit bias; beta map: zero) makes the layer start
    as plain batch norm, and constant-producing maps keep it exactly that.
    """

    def __init__(self, num_features: int, cond_dim: int, rng: np.random.Generator,
                 eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.num_features = num_features
        self.cond_dim = cond_dim
        self.eps = eps
        self.momentum = momentum
        self.gamma_map = Linear(cond_dim, num_features, rng, zero_init=True)
        self.gamma_map.bias.data = np.ones(num_features, dtype=default_dtype())
        self.beta_map = Linear(cond_dim, num_features, rng, zero_init=True)
        self.register_buffer("running_mean", np.zeros(num_features))
        self.register_buffer("running_var", np.ones(num_features))

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.num_features:
            raise ShapeMismatchError(f"ConditionalBatchNorm expected (B, {self.num_features}, K), got {x.shape}")
        if cond.ndim != 2 or cond.shape != (x.shape[0], self.cond_dim):
            raise ShapeMismatchError(f"condition shape {cond.shape} != ({x.shape[0]}, {self.cond_dim})")
        if self.training:
            if x.shape[0] * x.shape[2] < 2:
                raise ShapeMismatchError("ConditionalBatchNorm train mode needs at least 2 samples")
            mu = x.data.mean(axis=(0, 2))
            var = x.data.var(axis=(0, 2))
            m = self.momentum
            self.set_buffer("running_mean", m * self.running_mean + (1.0 - m) * mu)
            self.set_buffer("running_var", m * self.running_var + (1.0 - m) * var)
            xhat = ops.normalize(x, axes=(0, 2), eps=self.eps)
        else:
            invstd = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - constant(self.running_mean[None, :, None])) * constant(invstd[None, :, None])
        gamma = ops.reshape(self.gamma_map(cond), (x.shape[0], self.num_features, 1))
        beta = ops.reshape(self.beta_map(cond), (x.shape[0], self.num_features, 1))
        return xhat * gamma + beta


class MLP(Module):
    """Stack of Linear(+BatchNorm)+ReLU layers; the last layer is linear only."""

    def __init__(self, dims: list[int], rng: np.random.Generator, batch_norm: bool = True,
                 zero_init_last: bool = False):
        super().__init__()
        if len(dims) < 2:
            raise ShapeMismatchError("MLP needs at least input and output dims")
        self.n_layers = len(dims) - 1
        for i in range(self.n_layers):
            last = i == self.n_layers - 1
            setattr(self, f"fc{i}", Linear(dims[i], dims[i + 1], rng, zero_init=zero_init_last and last))
            if not last and batch_norm:
                setattr(self, f"bn{i}", BatchNorm(dims[i + 1]))

    def forward(self, x: Tensor) -> Tensor:
        lead = None
        if x.ndim != 2:
            lead = x.shape[:-1]
            x = ops.reshape(x, (-1, x.shape[-1]))
        for i in range(self.n_layers):
            x = getattr(self, f"fc{i}")(x)
            if i < self.n_layers - 1:
                bn = getattr(self, f"bn{i}", None)
                if bn is not None:
                    x = bn(x)
                x = ops.relu(x)
        if lead is not None:
            x = ops.reshape(x, lead + (x.shape[-1],))
        return x
