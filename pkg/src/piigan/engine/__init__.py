from .conv import ConvGeometry, conv2d, conv2d_constant_planes, conv2d_transpose, conv_geometry, linear
from .optim import AdamState, adam_step, zero_grad
from .tensor import (
    GraphError,
    NonFiniteError,
    Tensor,
    as_tensor,
    broadcast_to,
    concat,
    elu,
    exp,
    flatten,
    getitem,
    grad,
    is_grad_enabled,
    log,
    matmul,
    mean,
    no_grad,
    reshape,
    set_grad_enabled,
    sqrt,
    tabs,
    tanh,
    transpose,
    tsum,
    where,
)

__all__ = [
    "AdamState",
    "ConvGeometry",
    "GraphError",
    "NonFiniteError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "broadcast_to",
    "concat",
    "conv2d",
    "conv2d_constant_planes",
    "conv2d_transpose",
    "conv_geometry",
    "elu",
    "exp",
    "flatten",
    "getitem",
    "grad",
    "is_grad_enabled",
    "linear",
    "log",
    "matmul",
    "mean",
    "no_grad",
    "reshape",
    "set_grad_enabled",
    "sqrt",
    "tabs",
    "tanh",
    "transpose",
    "tsum",
    "where",
    "zero_grad",
]
