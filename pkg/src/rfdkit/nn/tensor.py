"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every differentiable value is a Tensor holding a numpy array, references to
its parent Tensors, and a vector-Jacobian closure. The forward pass records
the graph implicitly through those references; `backward` traces the graph
from the loss into a Tape (a topologically ordered record of the reachable
nodes) and walks it once in reverse, accumulating adjoints in a side table.
Leaf gradients are added into `.grad`, so calling backward twice without
zeroing doubles them exactly.

Training runs in float32 by default. The `precision` context switches the
default dtype (gradient checks use float64); mixing dtypes inside one graph
is an error rather than a silent upcast.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from ..errors import GraphError, NumericsError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_CHECK_FINITE = False


def default_dtype() -> np.dtype:
    return np.dtype(_DEFAULT_DTYPE)


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise GraphError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default float dtype (e.g. float64 for grad checks)."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def set_check_finite(enabled: bool) -> None:
    """When enabled, every op output is checked for NaN/Inf (slow; tests use it)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording the graph (inference / frozen stages)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A node in the autodiff graph: value + parents + vector-Jacobian closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_retains")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        if data.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            data = data.astype(_DEFAULT_DTYPE)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        # adjoints are written back to .grad only for retaining nodes (leaves)
        self._retains = requires_grad

    # -- inspection ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def __repr__(self) -> str:
        tag = "param" if isinstance(self, Parameter) else "tensor"
        return f"<{tag} shape={self.shape} dtype={self.data.dtype}{' grad' if self.requires_grad else ''}>"

    # -- graph management ---------------------------------------------------

    def detach(self) -> "Tensor":
        """Same values, cut from the graph. Gradients stop here."""
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        """Ask backward to store this node's adjoint in .grad (leaves do by default)."""
        self._retains = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)

    # -- operators (implemented in ops.py, attached below) --------------------

    def __add__(self, other): return _ops.add(self, other)
    def __radd__(self, other): return _ops.add(self, other)
    def __sub__(self, other): return _ops.sub(self, other)
    def __rsub__(self, other): return _ops.sub(_as_tensor(other, self.data.dtype), self)
    def __mul__(self, other): return _ops.mul(self, other)
    def __rmul__(self, other): return _ops.mul(self, other)
    def __truediv__(self, other): return _ops.div(self, other)
    def __rtruediv__(self, other): return _ops.div(_as_tensor(other, self.data.dtype), self)
    def __neg__(self): return _ops.neg(self)
    def __matmul__(self, other): return _ops.matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf tensor with a stable name for checkpointing."""

    __slots__ = ("name", "trainable")

    def __init__(self, data: np.ndarray, name: str, trainable: bool = True):
        super().__init__(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=True)
        if not name:
            raise GraphError("parameters need a non-empty name")
        self.name = name
        self.trainable = trainable


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def constant(data) -> Tensor:
    """Graph constant: carried through ops, never receives a gradient."""
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE))


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _scalar_err(t: Tensor):
    raise GraphError(f"expected a scalar tensor, got shape {t.shape}")


# -- op construction machinery ------------------------------------------------


def make_op(
    name: str,
    out_data: np.ndarray,
    parents: tuple[Tensor, ...],
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap an op result, recording parents/vjp only while grads are enabled."""
    dt = None
    for p in parents:
        if dt is None:
            dt = p.data.dtype
        elif p.data.dtype != dt:
            raise GraphError(f"{name}: mixed dtypes {dt} and {p.data.dtype} in one graph")
    out = Tensor(out_data)
    if _CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise NumericsError(f"non-finite values produced by op {name!r}")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._retains = False
        out._parents = parents
        out._vjp = vjp
    return out


class Tape:
    """Topologically ordered record of the graph nodes reaching a root.

    Parents always precede children, so one reversed sweep visits every node
    exactly once with its adjoint already complete.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(nodes)


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into leaf .grad for every reachable leaf."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad; no path to any parameter")
    if not np.all(np.isfinite(loss.data)):
        raise NumericsError("backward called on a non-finite loss")
    tape = Tape.trace(loss)
    adjoint: dict[int, np.ndarray] = {}
    if grad is None:
        grad = np.ones_like(loss.data)
    adjoint[id(loss)] = np.asarray(grad, dtype=loss.data.dtype)
    for node in reversed(tape.nodes):
        g = adjoint.get(id(node))
        if g is None or node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = adjoint.get(id(parent))
            adjoint[id(parent)] = pg if acc is None else acc + pg
    for node in tape.nodes:
        if node._retains and node.requires_grad:
            g = adjoint.get(id(node))
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# resolved at import of rfdkit.nn.ops (circular-import escape hatch)
class _OpsProxy:
    def __getattr__(self, item):
        from . import ops
        globals()["_ops"] = ops
        return getattr(ops, item)


_ops = _OpsProxy()
