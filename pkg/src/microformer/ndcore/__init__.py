"""Minimal dense-tensor core with reverse-mode differentiation."""
from . import ops
from .gradcheck import check_gradients, relative_error
from .module import BatchNorm, Conv2d, LayerNorm, Linear, Module
from .ops import (BatchNormStats, activation, attention, batch_norm, concat, conv2d, dropout,
                  elu, layer_norm, linear, matmul, maxpool2d, mse, normalize, relu, sigmoid,
                  softmax)
from .tensor import NonFiniteError, Tape, Tensor, active_tape, backward

__all__ = [
    "ops", "Tensor", "Tape", "backward", "active_tape", "NonFiniteError",
    "check_gradients", "relative_error", "Module", "Linear", "LayerNorm", "BatchNorm",
    "Conv2d", "BatchNormStats", "activation", "attention", "batch_norm", "concat", "conv2d",
    "dropout", "elu", "layer_norm", "linear", "matmul", "maxpool2d", "mse", "normalize",
    "relu", "sigmoid", "softmax",
]
