"""Minimal reverse-mode autodiff engine and the layers built on it.

numpy supplies dense array storage and BLAS; the graph, gradients,
layers, losses, and optimizers are implemented here.
"""

from .tensor import (
    Tensor,
    Parameter,
    Tape,
    backward,
    tensor,
    constant,
    no_grad,
    precision,
    set_check_finite,
    default_dtype,
    zero_grads,
)
from . import losses, ops
from .layers import Module, Linear, BatchNorm, ConditionalBatchNorm, MLP
from .losses import (
    softmax_cross_entropy,
    smooth_l1,
    binary_cross_entropy,
    bce_with_logits,
    kl_diag_gaussian_vs_std_normal,
)
from .optim import SGD, Adam

__all__ = [
    "Tensor", "Parameter", "Tape", "backward", "tensor", "constant",
    "no_grad", "precision", "set_check_finite", "default_dtype", "zero_grads",
    "ops", "losses",
    "Module", "Linear", "BatchNorm", "ConditionalBatchNorm", "MLP",
    "softmax_cross_entropy", "smooth_l1", "binary_cross_entropy",
    "bce_with_logits", "kl_diag_gaussian_vs_std_normal",
    "SGD", "Adam",
]
