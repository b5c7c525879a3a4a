"""Differentiable tensor operations and the AdamW optimizer."""

from rldenoise.numerics.tensor import Tensor, no_grad
from rldenoise.numerics.ops import (
    batch_norm2d,
    clamp,
    conv2d,
    conv_transpose2d,
    exp,
    linear,
    log_softmax,
    matmul,
    mean,
    minimum,
    mse_loss,
    relu,
    softmax,
    tsum,
)
from rldenoise.numerics.optim import AdamW
from rldenoise.numerics.init import kaiming_uniform
from rldenoise.numerics.gradcheck import finite_difference_grad, relative_error

__all__ = [
    "AdamW",
    "Tensor",
    "batch_norm2d",
    "clamp",
    "conv2d",
    "conv_transpose2d",
    "exp",
    "finite_difference_grad",
    "kaiming_uniform",
    "linear",
    "log_softmax",
    "matmul",
    "mean",
    "minimum",
    "mse_loss",
    "no_grad",
    "relative_error",
    "relu",
    "softmax",
    "tsum",
]
