"""Minimal reverse-mode autodiff over numpy float64 arrays."""
from .tensor import ContractViolation, Gradients, Tape, Tensor, active_tape, as_tensor, backward
from .ops import (
    EPS,
    absolute,
    adaptive_avg_pool,
    add,
    binary_cross_entropy,
    concat,
    conv2d,
    cosine_similarity,
    cross_entropy,
    getitem,
    grad_reverse,
    identity,
    l2_norm,
    matmul,
    mean,
    mul,
    region_pool_matrix,
    relu,
    reshape,
    roi_pool,
    sigmoid,
    smooth_l1,
    softmax,
    sub,
    sum,
)
from .nn import Conv2d, Linear, Module, parameter
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "ContractViolation", "Gradients", "Tape", "Tensor", "active_tape", "as_tensor", "backward",
    "EPS", "absolute", "adaptive_avg_pool", "add", "binary_cross_entropy", "concat", "conv2d",
    "cosine_similarity", "cross_entropy", "getitem", "grad_reverse", "identity", "l2_norm",
    "matmul", "mean", "mul", "region_pool_matrix", "relu", "reshape", "roi_pool", "sigmoid",
    "smooth_l1", "softmax", "sub", "sum", "Conv2d", "Linear", "Module", "parameter",
    "load_checkpoint", "save_checkpoint",
]
