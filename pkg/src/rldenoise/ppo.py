"""Rollout storage, generalized advantage estimation, and the PPO update.

Advantages follow A_t = sum_l (gamma * lambda)^l * delta_{t+l} with the TD
residual delta_t = R_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t), the
sum truncating at episode ends; returns are A_t + V(s_t). The policy loss
is the pessimistic clipped surrogate
    -mean(min(r * A, clip(r, 1 - eps, 1 + eps) * A))
plus value_coef * mse(values, returns) minus entropy_coef * entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from rldenoise.exceptions import NumericError
from rldenoise.numerics import AdamW, Tensor, clamp, exp, mean, minimum, mse_loss
from rldenoise.numerics.tensor import mul, sub
from rldenoise.policy import PolicyNet

LR_MIN = 1e-6
LR_MAX = 1e-3


@dataclass
class PPOControl:
    """PPO hyperparameters; the mutable fields are the ones action 4 adjusts."""

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    lr: float = 1e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    rollout_horizon: int = 64
    update_epochs: int = 4
    minibatch: int = 16

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must be in (0, 1], got {self.gae_lambda}")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError(f"clip_epsilon must be in (0, 1), got {self.clip_epsilon}")
        if not LR_MIN <= self.lr <= LR_MAX:
            raise ValueError(f"lr must be in [{LR_MIN}, {LR_MAX}], got {self.lr}")


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap_value: float, gamma: float, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """Backward-recursive advantages and returns over one rollout."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    n = rewards.size
    if values.size != n or dones.size != n:
        raise ValueError("rewards, values, and dones must have equal length")
    advantages = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        last = delta + gamma * lam * not_done * last
        advantages[t] = last
    return advantages, advantages + values


@dataclass
class RolloutBuffer:
    """Ordered transitions of one rollout plus the bootstrap value."""

    states: List[np.ndarray] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)
    bootstrap_value: Optional[float] = None
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def add(self, state: np.ndarray, action: int, reward: float, value: float,
            log_prob: float, done: bool) -> None:
        self.states.append(np.asarray(state, dtype=np.float64))
        self.actions.append(int(action))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.log_probs.append(float(log_prob))
        self.dones.append(bool(done))

    def __len__(self) -> int:
        return len(self.actions)

    def clear(self) -> None:
        self.__init__()

    def finalize(self, gamma: float, lam: float) -> None:
        """Compute advantages/returns; requires the bootstrap value."""
        if self.bootstrap_value is None:
            raise RuntimeError("bootstrap value must be set before computing advantages")
        self.advantages, self.returns = compute_gae(
            np.array(self.rewards), np.array(self.values),
            np.array(self.dones, dtype=np.float64), self.bootstrap_value, gamma, lam)

    def state_arrays(self, prefix: str = "buffer") -> dict:
        out = {
            f"{prefix}/states": np.array(self.states).reshape(len(self), -1)
            if self.states else np.zeros((0, 0)),
            f"{prefix}/actions": np.array(self.actions, dtype=np.float64),
            f"{prefix}/rewards": np.array(self.rewards),
            f"{prefix}/values": np.array(self.values),
            f"{prefix}/log_probs": np.array(self.log_probs),
            f"{prefix}/dones": np.array(self.dones, dtype=np.float64),
        }
        return out

    def load_state_arrays(self, arrays: dict, prefix: str = "buffer") -> None:
        self.clear()
        states = arrays[f"{prefix}/states"]
        for i in range(int(arrays[f"{prefix}/actions"].size)):
            self.add(states[i], int(arrays[f"{prefix}/actions"][i]),
                     arrays[f"{prefix}/rewards"][i], arrays[f"{prefix}/values"][i],
                     arrays[f"{prefix}/log_probs"][i], bool(arrays[f"{prefix}/dones"][i]))


@dataclass(frozen=True)
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    mean_ratio: float
    clip_fraction: float
    total_loss: float


def clipped_objective(ratio: Tensor, advantages: np.ndarray, eps: float) -> Tensor:
    """Per-sample pessimistic surrogate min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    adv = Tensor(np.asarray(advantages, dtype=np.float64))
    surr = mul(ratio, adv)
    surr_clipped = mul(clamp(ratio, 1.0 - eps, 1.0 + eps), adv)
    return minimum(surr, surr_clipped)


def ppo_loss(policy: PolicyNet, states: np.ndarray, actions: np.ndarray,
             old_log_probs: np.ndarray, advantages: np.ndarray, returns: np.ndarray,
             ctl: PPOControl, action_mask: Optional[np.ndarray] = None):
    """Build the differentiable PPO loss over one (mini)batch.

    Returns (loss tensor, parts dict with float diagnostics).
    """
    logp, values, entropy = policy.evaluate(states, actions, action_mask=action_mask)
    ratio = exp(sub(logp, Tensor(np.asarray(old_log_probs, dtype=np.float64))))
    objective = clipped_objective(ratio, advantages, ctl.clip_epsilon)
    policy_loss = -mean(objective)
    value_loss = mse_loss(values, Tensor(np.asarray(returns, dtype=np.float64)[:, None]))
    loss = policy_loss + ctl.value_coef * value_loss + (-ctl.entropy_coef) * entropy
    ratios = ratio.data
    parts = {
        "policy_loss": float(policy_loss.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "mean_ratio": float(ratios.mean()),
        "clip_fraction": float(np.mean(np.abs(ratios - 1.0) > ctl.clip_epsilon)),
    }
    return loss, parts


def ppo_update(policy: PolicyNet, optimizer: AdamW, buffer: RolloutBuffer,
               ctl: PPOControl, rng: np.random.Generator,
               action_mask: Optional[np.ndarray] = None) -> UpdateStats:
    """Run update_epochs of shuffled minibatch steps over the buffer.

    Advantages are normalized once per update (mean 0, std 1). A non-finite
    loss aborts the update with diagnostics before the optimizer step.
    """
    if buffer.advantages is None or buffer.returns is None:
        raise RuntimeError("advantages must be computed before the update")
    n = len(buffer)
    states = np.stack(buffer.states)
    actions = np.array(buffer.actions)
    old_logp = np.array(buffer.log_probs)
    returns = buffer.returns
    adv = buffer.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    optimizer.lr = ctl.lr
    agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
           "mean_ratio": 0.0, "clip_fraction": 0.0, "total_loss": 0.0}
    n_batches = 0
    for _ in range(ctl.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, ctl.minibatch):
            idx = order[start:start + ctl.minibatch]
            loss, parts = ppo_loss(policy, states[idx], actions[idx], old_logp[idx],
                                   adv[idx], returns[idx], ctl, action_mask=action_mask)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"PPO loss is non-finite (parts={parts}); update aborted")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            for key, value in parts.items():
                agg[key] += value
            agg["total_loss"] += float(loss.data)
            n_batches += 1
    return UpdateStats(**{key: value / n_batches for key, value in agg.items()})
