"""Differentiable neural-network operations.

Convolutions work on single images shaped [C, H, W]; linear/softmax ops
work on matrices shaped [B, d]. conv2d computes cross-correlation via
im2col + dgemm; conv_transpose2d is built from the adjoint scatter
(col2im) of the same indexing, so the inner-product identity
<conv(x), y> == <x, conv_t(y)> holds to rounding error for bias-free
calls with matching hyperparameters.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rldenoise.numerics.tensor import Tensor, make_op

__all__ = [
    "batch_norm2d",
    "clamp",
    "conv2d",
    "conv_transpose2d",
    "exp",
    "linear",
    "log_softmax",
    "matmul",
    "mean",
    "minimum",
    "mse_loss",
    "relu",
    "softmax",
    "tsum",
]


# -- im2col / col2im ----------------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """Gather k x k patches of [C,H,W] into columns [C*k*k, H_out*W_out]."""
    c, h, w = x.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ValueError(f"conv window {k}x{k} does not fit input {h}x{w} with padding {padding}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, h_out * w_out)
    return np.ascontiguousarray(cols), h_out, w_out


def _col2im(cols: np.ndarray, c: int, h_pad: int, w_pad: int, k: int, stride: int,
            h_out: int, w_out: int) -> np.ndarray:
    """Exact adjoint of _im2col: scatter-add columns back into a padded image."""
    img = np.zeros((c, h_pad, w_pad))
    cols6 = cols.reshape(c, k, k, h_out, w_out)
    for u in range(k):
        for v in range(k):
            img[:, u:u + stride * h_out:stride, v:v + stride * w_out:stride] += cols6[:, u, v]
    return img


def _check_conv_args(x: Tensor, w: Tensor, b: Optional[Tensor], stride: int, padding: int,
                     transpose: bool) -> int:
    if x.data.ndim != 3:
        raise ValueError(f"conv input must be [C,H,W], got shape {x.data.shape}")
    if w.data.ndim != 4 or w.data.shape[2] != w.data.shape[3]:
        raise ValueError(f"conv weight must be 4-d with square kernel, got {w.data.shape}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be nonnegative, got {padding}")
    in_axis = 0 if transpose else 1
    if x.data.shape[0] != w.data.shape[in_axis]:
        raise ValueError(
            f"input channels {x.data.shape[0]} do not match weight {w.data.shape}"
        )
    out_channels = w.data.shape[1 if transpose else 0]
    if b is not None and b.data.shape != (out_channels,):
        raise ValueError(f"bias shape {b.data.shape} does not match {out_channels} channels")
    return out_channels


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of [C_in,H,W] with weight [C_out,C_in,k,k] plus bias."""
    c_out = _check_conv_args(x, w, b, stride, padding, transpose=False)
    c_in, h, w_in = x.data.shape
    k = w.data.shape[2]
    cols, h_out, w_out = _im2col(x.data, k, stride, padding)
    w_mat = w.data.reshape(c_out, -1)
    out = w_mat @ cols
    if b is not None:
        out = out + b.data[:, None]
    out = out.reshape(c_out, h_out, w_out)

    def backward(g):
        g_mat = g.reshape(c_out, -1)
        dw = (g_mat @ cols.T).reshape(w.data.shape)
        db = None if b is None else g.sum(axis=(1, 2))
        dx_pad = _col2im(w_mat.T @ g_mat, c_in, h + 2 * padding, w_in + 2 * padding,
                         k, stride, h_out, w_out)
        dx = dx_pad[:, padding:padding + h, padding:padding + w_in]
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution of [C_in,H,W] with weight [C_in,C_out,k,k].

    Output extent is (H-1)*stride - 2*padding + k + output_padding; the op
    is the exact adjoint of conv2d with the same weight array, stride and
    padding.
    """
    c_out = _check_conv_args(x, w, b, stride, padding, transpose=True)
    if not 0 <= output_padding < stride:
        raise ValueError(f"output_padding must satisfy 0 <= op < stride, got {output_padding}")
    c_in, h, w_in = x.data.shape
    k = w.data.shape[2]
    h_out = (h - 1) * stride - 2 * padding + k + output_padding
    w_out = (w_in - 1) * stride - 2 * padding + k + output_padding
    if h_out <= 0 or w_out <= 0:
        raise ValueError("transposed conv output extent is not positive")

    w_mat = w.data.reshape(c_in, -1)
    proj = w_mat.T @ x.data.reshape(c_in, -1)
    img = _col2im(proj, c_out, h_out + 2 * padding, w_out + 2 * padding, k, stride, h, w_in)
    out = img[:, padding:padding + h_out, padding:padding + w_out]
    if b is not None:
        out = out + b.data[:, None, None]

    def backward(g):
        cols_g, gh, gw = _im2col(g, k, stride, padding)
        # Geometry guarantees the gathered grid matches the input grid.
        assert (gh, gw) == (h, w_in)
        dx = (w_mat @ cols_g).reshape(c_in, h, w_in)
        dw = (x.data.reshape(c_in, -1) @ cols_g.T).reshape(w.data.shape)
        db = None if b is None else g.sum(axis=(1, 2))
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


# -- normalization ------------------------------------------------------------


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of [C,H,W] over the spatial extent.

    Train mode normalizes by batch statistics and folds them into the
    running buffers with the given momentum; eval mode normalizes by the
    stored running statistics and leaves them untouched.
    """
    if x.data.ndim != 3:
        raise ValueError(f"batch_norm2d input must be [C,H,W], got {x.data.shape}")
    c = x.data.shape[0]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError("gamma/beta must be per-channel vectors")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ValueError("running statistics must be per-channel vectors")

    if training:
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.copy()
        var = running_var.copy()

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def backward(g):
        dgamma = (g * xhat).sum(axis=(1, 2))
        dbeta = g.sum(axis=(1, 2))
        dxhat = g * gamma.data[:, None, None]
        if training:
            m1 = dxhat.mean(axis=(1, 2), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(1, 2), keepdims=True)
            dx = inv[:, None, None] * (dxhat - m1 - xhat * m2)
        else:
            dx = dxhat * inv[:, None, None]
        return dx, dgamma, dbeta

    return make_op(out, (x, gamma, beta), backward)


# -- pointwise and reductions -------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_op(np.maximum(x.data, 0.0), (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return make_op(out, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    mask = (x.data > lo) & (x.data < hi)

    def backward(g):
        return (g * mask,)

    return make_op(np.clip(x.data, lo, hi), (x,), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise min; ties route the gradient to the first operand."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"minimum: shapes {a.data.shape} and {b.data.shape} differ")
    take_a = a.data <= b.data

    def backward(g):
        return g * take_a, g * ~take_a

    return make_op(np.minimum(a.data, b.data), (a, b), backward)


def tsum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    """Sum over all elements (axis=None) or along one axis."""
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full_like(x.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return make_op(out, (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = x.data.mean()

    def backward(g):
        return (np.full_like(x.data, float(g) / n),)

    return make_op(out, (x,), backward)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences, as a scalar tensor."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse_loss: shapes {a.data.shape} and {b.data.shape} differ")
    diff = a.data - b.data
    n = diff.size
    out = np.mean(diff * diff)

    def backward(g):
        scale = 2.0 * float(g) / n
        return scale * diff, -scale * diff

    return make_op(out, (a, b), backward)


# -- linear algebra and softmax ----------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner dims {a.data.shape} @ {b.data.shape} do not match")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return make_op(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map x @ w.T + b for x of shape [B, d_in], w of shape [d_out, d_in]."""
    if x.data.ndim != 2:
        raise ValueError(f"linear input must be [B, d], got {x.data.shape}")
    if w.data.ndim != 2 or w.data.shape[1] != x.data.shape[1]:
        raise ValueError(f"linear weight {w.data.shape} does not match input {x.data.shape}")
    out = x.data @ w.data.T
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise ValueError(f"linear bias shape {b.data.shape} is wrong")
        out = out + b.data

    def backward(g):
        dx = g @ w.data
        dw = g.T @ x.data
        db = None if b is None else g.sum(axis=0)
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


def _shifted(x: np.ndarray) -> np.ndarray:
    return x - x.max(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis; output sums to 1 per row."""
    e = np.exp(_shifted(x.data))
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return make_op(out, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    shifted = _shifted(x.data)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - logz
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return make_op(out, (x,), backward)
