"""MLP actor-critic over a downsampled image state.

The state vector is the current image area-averaged to 32x32 and
flattened (1024 values) plus two scalars: episode progress and the last
reward scaled by 100. The trunk is linear(1026 -> 256) + ReLU,
linear(256 -> 128) + ReLU; the actor head emits softmax probabilities
over the five actions and the critic head a scalar state value.
"""

from __future__ import annotations

import hashlib
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from rldenoise.numerics import (
    Tensor,
    kaiming_uniform,
    linear,
    log_softmax,
    mean,
    no_grad,
    relu,
    softmax,
    tsum,
)
from rldenoise.numerics.tensor import mul

STATE_SIDE = 32
STATE_DIM = STATE_SIDE * STATE_SIDE + 2
N_ACTIONS = 5
_MASK_OFFSET = -1e9


def downsample_to_state(image: np.ndarray) -> np.ndarray:
    """Area-average a square-ish image onto the 32x32 state grid."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"state featurizer expects a 2-d image, got {img.shape}")
    h, w = img.shape
    out = img
    if h != STATE_SIDE or w != STATE_SIDE:
        if h % STATE_SIDE == 0 and w % STATE_SIDE == 0:
            fh, fw = h // STATE_SIDE, w // STATE_SIDE
            out = img.reshape(STATE_SIDE, fh, STATE_SIDE, fw).mean(axis=(1, 3))
        elif STATE_SIDE % h == 0 and STATE_SIDE % w == 0:
            out = np.repeat(np.repeat(img, STATE_SIDE // h, axis=0), STATE_SIDE // w, axis=1)
        else:
            raise ValueError(f"image extent {h}x{w} is not commensurate with the state grid")
    return out


def featurize(image: np.ndarray, step_index: int, max_steps: int,
              last_reward: float) -> np.ndarray:
    grid = downsample_to_state(image).reshape(-1)
    extras = np.array([step_index / max_steps, last_reward / 100.0])
    return np.concatenate([grid, extras])


class PolicyNet:
    """Shared-trunk actor-critic MLP."""

    def __init__(self, d_state: int = STATE_DIM, hidden: Tuple[int, int] = (256, 128),
                 n_actions: int = N_ACTIONS, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAC]))
        self.d_state = d_state
        self.n_actions = n_actions
        h1, h2 = hidden
        self.w1 = Tensor(kaiming_uniform((h1, d_state), d_state, rng), requires_grad=True)
        self.b1 = Tensor(np.zeros(h1), requires_grad=True)
        self.w2 = Tensor(kaiming_uniform((h2, h1), h1, rng), requires_grad=True)
        self.b2 = Tensor(np.zeros(h2), requires_grad=True)
        # Output heads start near zero so the initial action distribution is
        # near-uniform for every seed and the initial value estimate is ~0;
        # full-scale head init lets seed luck skew early exploration by 2-3x.
        self.wa = Tensor(0.01 * kaiming_uniform((n_actions, h2), h2, rng), requires_grad=True)
        self.ba = Tensor(np.zeros(n_actions), requires_grad=True)
        self.wc = Tensor(0.01 * kaiming_uniform((1, h2), h2, rng), requires_grad=True)
        self.bc = Tensor(np.zeros(1), requires_grad=True)

    def _trunk(self, states: Tensor) -> Tuple[Tensor, Tensor]:
        h = relu(linear(states, self.w1, self.b1))
        h = relu(linear(h, self.w2, self.b2))
        logits = linear(h, self.wa, self.ba)
        values = linear(h, self.wc, self.bc)
        return logits, values

    @staticmethod
    def _apply_mask(logits: Tensor, mask: Optional[np.ndarray]) -> Tensor:
        if mask is None:
            return logits
        offset = np.where(mask, 0.0, _MASK_OFFSET)
        return logits + Tensor(np.broadcast_to(offset, logits.shape).copy())

    def act(self, state: np.ndarray, rng: np.random.Generator,
            action_mask: Optional[np.ndarray] = None) -> Tuple[int, float, float]:
        """Sample an action; returns (action, log_prob, value)."""
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.d_state,):
            raise ValueError(f"state must have length {self.d_state}, got {state.shape}")
        if not np.isfinite(state).all():
            raise ValueError("state vector contains non-finite values")
        with no_grad():
            logits, values = self._trunk(Tensor(state[None]))
            logits = self._apply_mask(logits, action_mask)
            logp = log_softmax(logits).data[0]
        probs = np.exp(logp)
        action = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        action = min(action, self.n_actions - 1)
        return action, float(logp[action]), float(values.data[0, 0])

    def greedy_action(self, state: np.ndarray,
                      action_mask: Optional[np.ndarray] = None) -> int:
        state = np.asarray(state, dtype=np.float64)
        with no_grad():
            logits, _ = self._trunk(Tensor(state[None]))
            logits = self._apply_mask(logits, action_mask)
        return int(np.argmax(logits.data[0]))

    def value(self, state: np.ndarray) -> float:
        """Critic estimate alone; consumes no randomness."""
        state = np.asarray(state, dtype=np.float64)
        with no_grad():
            _, values = self._trunk(Tensor(state[None]))
        return float(values.data[0, 0])

    def evaluate(self, states: np.ndarray, actions: np.ndarray,
                 action_mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor, Tensor]:
        """Differentiable pass over a batch.

        Returns per-sample log-probabilities of the taken actions [B], the
        critic values [B, 1], and the mean categorical entropy (scalar).
        """
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions)
        if states.ndim != 2 or states.shape[1] != self.d_state:
            raise ValueError(f"states must be [B, {self.d_state}], got {states.shape}")
        if actions.shape != (states.shape[0],):
            raise ValueError("actions must be a vector matching the batch")
        logits, values = self._trunk(Tensor(states))
        logits = self._apply_mask(logits, action_mask)
        logp_all = log_softmax(logits)
        onehot = np.zeros((states.shape[0], self.n_actions))
        onehot[np.arange(states.shape[0]), actions.astype(int)] = 1.0
        logp = tsum(mul(logp_all, Tensor(onehot)), axis=1)
        probs = softmax(logits)
        entropy = mean(neg_sum_rows(mul(probs, logp_all)))
        return logp, values, entropy

    # -- plumbing --------------------------------------------------------------

    def named_parameters(self) -> Dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "wa": self.wa, "ba": self.ba, "wc": self.wc, "bc": self.bc}

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, p in sorted(self.named_parameters().items()):
            digest.update(name.encode())
            digest.update(p.data.tobytes())
        return digest.hexdigest()

    def state_arrays(self, prefix: str = "policy") -> Dict[str, np.ndarray]:
        return {f"{prefix}/{n}": p.data.copy() for n, p in self.named_parameters().items()}

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = "policy") -> None:
        for name, p in self.named_parameters().items():
            p.data[...] = arrays[f"{prefix}/{name}"]

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None


def neg_sum_rows(x: Tensor) -> Tensor:
    """-sum over the last axis, as a [B] tensor (entropy helper)."""
    return -tsum(x, axis=1)
