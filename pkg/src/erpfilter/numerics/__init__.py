"""Minimal reverse-mode tensor engine for the loop-filter network."""
from .tensor import GraphError, Tensor, no_grad
from .ops import (
    ShapeError,
    conv2d,
    partial_conv,
    depthwise_conv,
    pointwise_conv,
    global_avg_pool,
    fully_connected,
    linear,
    relu,
    sigmoid,
    clip,
    gather_weighted,
)
from .optim import (
    NonFiniteGradientError,
    OptimizerConfig,
    ParameterSet,
    adam_step,
    halving_schedule,
    xavier_init,
)
from .gradcheck import check_gradients, relative_error

__all__ = [
    "GraphError", "Tensor", "no_grad", "ShapeError", "conv2d", "partial_conv", "depthwise_conv",
    "pointwise_conv", "global_avg_pool", "fully_connected", "linear", "relu", "sigmoid", "clip",
    "gather_weighted", "NonFiniteGradientError", "OptimizerConfig", "ParameterSet", "adam_step",
    "halving_schedule", "xavier_init", "check_gradients", "relative_error",
]
