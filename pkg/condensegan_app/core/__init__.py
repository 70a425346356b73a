"""Minimal dense-tensor arithmetic with reverse-mode differentiation."""

from .ops import (
    Activation,
    activation,
    bce_loss,
    concat_channels,
    conv2d,
    conv_transpose2d,
    instance_norm,
    l1_loss,
    slice_channels,
    weighted_channel_l1,
)
from .optim import AdamState, adam_step, zero_grad
from .tensor import Tensor, gradcheck, no_grad

__all__ = [
    "Activation",
    "AdamState",
    "Tensor",
    "activation",
    "adam_step",
    "bce_loss",
    "concat_channels",
    "conv2d",
    "conv_transpose2d",
    "gradcheck",
    "instance_norm",
    "l1_loss",
    "no_grad",
    "slice_channels",
    "weighted_channel_l1",
    "zero_grad",
]
