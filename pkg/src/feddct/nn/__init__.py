"""Minimal deterministic float64 autograd engine."""

from . import checkpoint, functional
from .functional import forward_layer
from .layers import (
    AvgPool2d,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    Layer,
    Parameter,
    ReLU,
    Sequential,
    Softmax,
    layer_from_config,
)
from .optim import MissingGradientError, NesterovSGD, cosine_lr, sgd_nesterov_step
from .rng import RngStream
from .tensor import GraphError, ShapeError, Tensor

__all__ = [
    "AvgPool2d",
    "Conv2d",
    "Dense",
    "Dropout",
    "Flatten",
    "GlobalAvgPool",
    "GraphError",
    "Layer",
    "MissingGradientError",
    "NesterovSGD",
    "Parameter",
    "ReLU",
    "RngStream",
    "Sequential",
    "ShapeError",
    "Softmax",
    "Tensor",
    "checkpoint",
    "cosine_lr",
    "forward_layer",
    "functional",
    "layer_from_config",
    "sgd_nesterov_step",
]
