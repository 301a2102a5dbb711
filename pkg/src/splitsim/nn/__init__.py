"""Minimal float64 feed-forward engine with split execution support."""

from .layers import (
    LayerSpec,
    conv1d,
    conv2d,
    dense,
    flatten,
    maxpool2d,
    relu,
    sigmoid,
)
from .losses import loss_mse, loss_softmax_ce
from .network import (
    NetworkSpec,
    ParameterSet,
    SplitModelSpec,
    TapeContext,
    average_parameters,
    backward,
    forward,
    init_parameters,
    merge_parameters,
    sgd_step,
)
from .checkpoint import load_parameters, save_parameters

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "ParameterSet",
    "SplitModelSpec",
    "TapeContext",
    "average_parameters",
    "backward",
    "conv1d",
    "conv2d",
    "dense",
    "flatten",
    "forward",
    "init_parameters",
    "load_parameters",
    "loss_mse",
    "loss_softmax_ce",
    "maxpool2d",
    "merge_parameters",
    "relu",
    "save_parameters",
    "sgd_step",
    "sigmoid",
]
