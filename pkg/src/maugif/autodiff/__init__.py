from .ops import (add, add_channel_bias, conv2d, conv2d_macs, hard_threshold, leaky_relu,
                  mean, mse, mul, neg, scale, softplus, square, sub)
from .ops import sum as tsum
from .check import gradcheck, numerical_grad
from .optim import AdamW, default_warmup, lr_schedule
from .tensor import Tape, Tensor, active_tape, backward

__all__ = [
    "AdamW", "Tape", "Tensor", "active_tape", "add", "add_channel_bias", "backward", "conv2d",
    "conv2d_macs", "default_warmup", "gradcheck", "hard_threshold", "leaky_relu", "lr_schedule", "mean",
    "mse", "mul", "neg", "numerical_grad", "scale", "softplus", "square", "sub", "tsum",
]
