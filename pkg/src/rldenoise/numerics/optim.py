"""AdamW with decoupled weight decay over named parameter tensors."""

from __future__ import annotations

from typing import Dict

import numpy as np

from rldenoise.exceptions import NumericError
from rldenoise.numerics.tensor import Tensor


class AdamW:
    """Decoupled-weight-decay Adam.

    The decay shrinks each parameter by lr * weight_decay before the
    bias-corrected moment update is applied, so regularization never runs
    through the adaptive scaling.
    """

    def __init__(self, params: Dict[str, Tensor], lr: float,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        if lr < 0:
            raise ValueError(f"learning rate must be nonnegative, got {lr}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be nonnegative, got {weight_decay}")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        # Scratch buffers keep the hot loop free of large temporaries.
        self._t1 = {name: np.empty_like(p.data) for name, p in self.params.items()}
        self._t2 = {name: np.empty_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """Apply one update; aborts without touching any parameter on NaN/Inf grads."""
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            if not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}; update aborted")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            t1 = self._t1[name]
            t2 = self._t2[name]
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=t1)
            m += t1
            v *= self.beta2
            np.multiply(g, g, out=t1)
            t1 *= 1.0 - self.beta2
            v += t1
            np.divide(v, bc2, out=t2)
            np.sqrt(t2, out=t2)
            t2 += self.eps
            np.divide(m, bc1, out=t1)
            t1 /= t2
            t1 *= self.lr
            p.data -= t1

    # -- checkpoint support ---------------------------------------------------

    def state_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {f"{prefix}/step": np.array([float(self.step_count)])}
        for name in self.params:
            out[f"{prefix}/{name}.m"] = self.m[name].copy()
            out[f"{prefix}/{name}.v"] = self.v[name].copy()
        return out

    def load_state_arrays(self, prefix: str, arrays: Dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays[f"{prefix}/step"][0])
        for name in self.params:
            self.m[name][...] = arrays[f"{prefix}/{name}.m"]
            self.v[name][...] = arrays[f"{prefix}/{name}.v"]
