"""Minimal reverse-mode differentiation and the layers the forecaster needs."""

from .gradcheck import GradCheckReport, grad_check
from .layers import (
    conv,
    gru_cell,
    init_conv,
    init_gru,
    init_linear,
    init_mlp,
    linear,
    mlp,
    mlp_forward_backward,
)
from .optim import adam_step
from .params import ParamStore
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    conv2d,
    custom_op,
    exp,
    gather,
    global_max_pool,
    log,
    relu,
    scatter_max,
    sigmoid,
    softplus,
    sqrt,
    stack,
    tanh,
    where_const,
)

__all__ = [
    "GradCheckReport",
    "ParamStore",
    "Tensor",
    "adam_step",
    "as_tensor",
    "concat",
    "conv",
    "conv2d",
    "custom_op",
    "exp",
    "gather",
    "global_max_pool",
    "grad_check",
    "gru_cell",
    "init_conv",
    "init_gru",
    "init_linear",
    "init_mlp",
    "linear",
    "log",
    "mlp",
    "mlp_forward_backward",
    "relu",
    "scatter_max",
    "sigmoid",
    "softplus",
    "sqrt",
    "stack",
    "tanh",
    "where_const",
]
