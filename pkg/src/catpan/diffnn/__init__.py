"""Minimal tape-based reverse-mode differentiation and the Adam optimizer."""

from .ops import (
    add,
    blur,
    conv2d,
    conv2d_value,
    decimate,
    div,
    l1_loss,
    mean,
    mul,
    relu,
    scale,
    sub,
    sum_all,
    upsample,
)
from .optim import AdamState, adam_step
from .tape import Param, Tape, Var, active_tape, backward, zero_grads

__all__ = [
    "AdamState", "Param", "Tape", "Var", "active_tape", "adam_step", "add", "backward",
    "blur", "conv2d", "conv2d_value", "decimate", "div", "l1_loss", "mean", "mul", "relu",
    "scale", "sub", "sum_all", "upsample", "zero_grads",
]
