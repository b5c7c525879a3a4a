"""Encoder-decoder denoiser with additive skip connections.

The encoder halves the spatial extent twice (64 -> 128 -> 256 channels),
a bottleneck expands to 512 channels, and the decoder upsamples back with
transposed convolutions. Skip connections are element-wise additions, so
the decoder ladder is chosen to make every addition shape-exact:

    enc1 conv  C ->  64, stride 1        (H,   W)
    enc2 conv 64 -> 128, stride 2        (H/2, W/2)
    enc3 conv 128 -> 256, stride 2       (H/4, W/4)
    bott conv 256 -> 512, stride 1       (H/4, W/4)
    dec1 convT 512 -> 128, stride 2, + enc2
    dec2 convT 128 ->  64, stride 2, + enc1
    dec3 conv   64 ->  64, stride 1, + enc1
    out  conv   64 ->   C, stride 1, clamp to [0, 1]

With skip connections disabled the decoder reverts to the plain
512 -> 256 -> 128 -> 64 ladder with no additions, which also changes the
parameter count. Every stage is conv + BN + ReLU except the output conv.
"""

from __future__ import annotations

import hashlib
from typing import Dict, Optional

import numpy as np

from rldenoise.exceptions import NumericError
from rldenoise.numerics import (
    AdamW,
    Tensor,
    batch_norm2d,
    clamp,
    conv2d,
    conv_transpose2d,
    kaiming_uniform,
    mse_loss,
    no_grad,
    relu,
)

KERNEL = 3
PADDING = 1


class _Stage:
    """One conv (or transposed conv) with optional BN + ReLU."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator,
                 transpose: bool = False, bn: bool = True, act: bool = True):
        self.stride = stride
        self.transpose = transpose
        self.bn = bn
        self.act = act
        shape = (c_in, c_out, KERNEL, KERNEL) if transpose else (c_out, c_in, KERNEL, KERNEL)
        fan_in = c_in * KERNEL * KERNEL
        self.weight = Tensor(kaiming_uniform(shape, fan_in, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        if bn:
            self.gamma = Tensor(np.ones(c_out), requires_grad=True)
            self.beta = Tensor(np.zeros(c_out), requires_grad=True)
            self.running_mean = np.zeros(c_out)
            self.running_var = np.ones(c_out)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        if self.transpose:
            h = conv_transpose2d(x, self.weight, self.bias, stride=self.stride,
                                 padding=PADDING, output_padding=self.stride - 1)
        else:
            h = conv2d(x, self.weight, self.bias, stride=self.stride, padding=PADDING)
        if self.bn:
            h = batch_norm2d(h, self.gamma, self.beta, self.running_mean,
                             self.running_var, training=training)
        if self.act:
            h = relu(h)
        return h

    def params(self, prefix: str) -> Dict[str, Tensor]:
        out = {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}
        if self.bn:
            out[f"{prefix}.gamma"] = self.gamma
            out[f"{prefix}.beta"] = self.beta
        return out

    def buffers(self, prefix: str) -> Dict[str, np.ndarray]:
        if not self.bn:
            return {}
        return {f"{prefix}.running_mean": self.running_mean,
                f"{prefix}.running_var": self.running_var}


class EDNet:
    """The denoiser. Holds its parameters, BN buffers, and a train/eval flag."""

    def __init__(self, channels: int = 1, skip_connections: bool = True,
                 seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xED]))
        self.channels = channels
        self.skip_connections = skip_connections
        self.training = False
        self.enc1 = _Stage(channels, 64, stride=1, rng=rng)
        self.enc2 = _Stage(64, 128, stride=2, rng=rng)
        self.enc3 = _Stage(128, 256, stride=2, rng=rng)
        self.bottleneck = _Stage(256, 512, stride=1, rng=rng)
        if skip_connections:
            self.dec1 = _Stage(512, 128, stride=2, rng=rng, transpose=True)
            self.dec2 = _Stage(128, 64, stride=2, rng=rng, transpose=True)
            self.dec3 = _Stage(64, 64, stride=1, rng=rng)
        else:
            self.dec1 = _Stage(512, 256, stride=2, rng=rng, transpose=True)
            self.dec2 = _Stage(256, 128, stride=2, rng=rng, transpose=True)
            self.dec3 = _Stage(128, 64, stride=1, rng=rng)
        self.out = _Stage(64, channels, stride=1, rng=rng, bn=False, act=False)
        self._stages = {
            "enc1": self.enc1, "enc2": self.enc2, "enc3": self.enc3,
            "bottleneck": self.bottleneck, "dec1": self.dec1, "dec2": self.dec2,
            "dec3": self.dec3, "out": self.out,
        }

    def train(self) -> "EDNet":
        self.training = True
        return self

    def eval(self) -> "EDNet":
        self.training = False
        return self

    def forward(self, x: Tensor) -> Tensor:
        """Denoise one [C, H, W] tensor; H and W must be divisible by 4."""
        c, h, w = x.data.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        if h % 4 or w % 4:
            raise ValueError(f"spatial dims must be divisible by 4, got {h}x{w}")
        training = self.training
        e1 = self.enc1.forward(x, training)
        e2 = self.enc2.forward(e1, training)
        e3 = self.enc3.forward(e2, training)
        b = self.bottleneck.forward(e3, training)
        d1 = self.dec1.forward(b, training)
        if self.skip_connections:
            d1 = d1 + e2
        d2 = self.dec2.forward(d1, training)
        if self.skip_connections:
            d2 = d2 + e1
        d3 = self.dec3.forward(d2, training)
        if self.skip_connections:
            d3 = d3 + e1
        return clamp(self.out.forward(d3, training), 0.0, 1.0)

    def denoise(self, image: np.ndarray, passes: int = 1) -> np.ndarray:
        """Inference on a 2-d image in eval mode; no graph, no side effects."""
        was_training = self.training
        self.training = False
        try:
            with no_grad():
                current = np.asarray(image, dtype=np.float64)
                for _ in range(passes):
                    current = self.forward(Tensor(current[None])).data[0]
            return current
        finally:
            self.training = was_training

    # -- parameter plumbing ----------------------------------------------------

    def named_parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for name, stage in self._stages.items():
            out.update(stage.params(name))
        return out

    def named_buffers(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for name, stage in self._stages.items():
            out.update(stage.buffers(name))
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def checksum(self) -> str:
        """Digest over parameters and BN buffers, for mutation tracking."""
        digest = hashlib.sha256()
        for name, p in sorted(self.named_parameters().items()):
            digest.update(name.encode())
            digest.update(p.data.tobytes())
        for name, buf in sorted(self.named_buffers().items()):
            digest.update(name.encode())
            digest.update(buf.tobytes())
        return digest.hexdigest()

    def state_arrays(self, prefix: str = "model") -> Dict[str, np.ndarray]:
        out = {f"{prefix}/{n}": p.data.copy() for n, p in self.named_parameters().items()}
        out.update({f"{prefix}/{n}": b.copy() for n, b in self.named_buffers().items()})
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = "model") -> None:
        for name, p in self.named_parameters().items():
            p.data[...] = arrays[f"{prefix}/{name}"]
        for name, buf in self.named_buffers().items():
            buf[...] = arrays[f"{prefix}/{name}"]

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None


def expected_param_count(channels: int, skip_connections: bool = True) -> int:
    """Closed-form parameter total from the layer table."""
    def conv(c_in, c_out, bn=True):
        n = c_out * c_in * KERNEL * KERNEL + c_out  # weight + bias
        if bn:
            n += 2 * c_out  # gamma + beta
        return n

    ladder = [(channels, 64), (64, 128), (128, 256), (256, 512)]
    if skip_connections:
        ladder += [(512, 128), (128, 64), (64, 64)]
    else:
        ladder += [(512, 256), (256, 128), (128, 64)]
    total = sum(conv(ci, co) for ci, co in ladder)
    total += conv(64, channels, bn=False)
    return total


def fine_tune_step(model: EDNet, optimizer: AdamW, x_low: np.ndarray,
                   x_high: np.ndarray) -> float:
    """One AdamW step on MSE(forward(x_low), x_high); returns the pre-step loss.

    The update is aborted (parameters untouched) when the loss or any
    gradient is non-finite.
    """
    if x_low.shape != x_high.shape:
        raise ValueError(f"pair shapes {x_low.shape} and {x_high.shape} differ")
    was_training = model.training
    model.training = True
    try:
        pred = model.forward(Tensor(np.asarray(x_low, dtype=np.float64)[None]))
        loss = mse_loss(pred, Tensor(np.asarray(x_high, dtype=np.float64)[None]))
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise NumericError("fine-tune loss is non-finite; update aborted")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        return loss_value
    finally:
        model.training = was_training
