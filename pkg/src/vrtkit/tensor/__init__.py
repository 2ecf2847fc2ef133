"""Tensor substrate: values, tape, primitive ops, layers, gradient checks, NTF I/O."""

from . import ntf, ops
from .gradcheck import grad_check, grad_check_many, numeric_gradient, relative_error
from .nn import (
    LN_EPS,
    LinearWeights,
    NormWeights,
    bilinear_matrix,
    conv2d,
    init_linear,
    init_norm,
    layer_norm,
    linear,
    mlp2,
    resize_bilinear,
    softmax_rows,
    trunc_normal,
)
from .ops import concat, matmul, permute, reshape, split
from .tensor import Gradients, Node, Tape, Tensor, as_tensor, current_tape, record

__all__ = [
    "LN_EPS",
    "Gradients",
    "LinearWeights",
    "Node",
    "NormWeights",
    "Tape",
    "Tensor",
    "as_tensor",
    "bilinear_matrix",
    "concat",
    "conv2d",
    "current_tape",
    "grad_check",
    "grad_check_many",
    "init_linear",
    "init_norm",
    "layer_norm",
    "linear",
    "matmul",
    "mlp2",
    "ntf",
    "numeric_gradient",
    "ops",
    "permute",
    "record",
    "relative_error",
    "reshape",
    "resize_bilinear",
    "softmax_rows",
    "split",
    "trunc_normal",
]
