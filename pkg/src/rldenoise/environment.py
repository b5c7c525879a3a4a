"""Gym-style denoising environment.

Each episode serves one paired (noisy, clean) sample. The five actions:

    0 APPLY_ONCE   current := denoise(current)
    1 APPLY_MULTI  current := denoise applied multi_pass times iteratively
    2 FINE_TUNE    one gradient step on MSE(forward(low), high), then
                   current := denoise(low)
    3 SKIP         current unchanged
    4 ADJUST_PPO   mutate PPO control within bounds, then current := denoise(low)

The reward is the sanitize-and-clip combination of PSNR and SSIM against
the ground truth. Action 4's rule watches the standard deviation of the
last 10 rewards: above 5.0 it halves the PPO learning rate (floor 1e-6)
and raises the value coefficient (cap 1.0); otherwise it nudges the
learning rate up (cap 1e-3) and decays the entropy coefficient (floor
1e-4). Only action 2 may mutate denoiser parameters.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Tuple

import numpy as np

from rldenoise.ednet import EDNet, fine_tune_step
from rldenoise.metrics import QualityReport, combine_reward, psnr, rmse, ssim
from rldenoise.numerics import AdamW
from rldenoise.policy import featurize
from rldenoise.ppo import LR_MAX, LR_MIN, PPOControl

REWARD_WINDOW = 10
REWARD_STD_THRESHOLD = 5.0


class ActionId(IntEnum):
    APPLY_ONCE = 0
    APPLY_MULTI = 1
    FINE_TUNE = 2
    SKIP = 3
    ADJUST_PPO = 4


@dataclass(frozen=True)
class StepResult:
    state: np.ndarray
    reward: float
    done: bool
    report: QualityReport
    action: int


class DenoiseEnv:
    """Owns one denoiser (plus its optimizer) and one PPO control block.

    Parallel episodes need disjoint model clones; within an episode the
    environment is the single writer of its model.
    """

    def __init__(self, model: EDNet, model_optimizer: Optional[AdamW],
                 ppo_ctl: PPOControl, max_steps: int = 8, multi_pass: int = 3,
                 reward_mode: str = "psnr+ssim", reward_clipping: bool = True):
        if max_steps < 1:
            raise ValueError(f"max_steps must be positive, got {max_steps}")
        self.model = model
        self.model_optimizer = model_optimizer
        self.ppo_ctl = ppo_ctl
        self.max_steps = max_steps
        self.multi_pass = multi_pass
        self.reward_mode = reward_mode
        self.reward_clipping = reward_clipping
        self.low: Optional[np.ndarray] = None
        self.high: Optional[np.ndarray] = None
        self.current: Optional[np.ndarray] = None
        self.step_index = 0
        self.last_reward = 0.0
        # Recent-reward window for action 4; spans episodes on purpose.
        self.reward_window: deque = deque(maxlen=REWARD_WINDOW)

    @property
    def done(self) -> bool:
        return self.step_index >= self.max_steps

    def reset(self, sample: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        low, high = sample
        low = np.asarray(low, dtype=np.float64)
        high = np.asarray(high, dtype=np.float64)
        if low.shape != high.shape:
            raise ValueError(f"pair shapes {low.shape} and {high.shape} differ")
        if low.min() < 0 or low.max() > 1 or high.min() < 0 or high.max() > 1:
            raise ValueError("images must lie in [0, 1]")
        self.low = low
        self.high = high
        self.current = low.copy()
        self.step_index = 0
        self.last_reward = 0.0
        return self._state()

    def _state(self) -> np.ndarray:
        return featurize(self.current, self.step_index, self.max_steps, self.last_reward)

    def _reward(self, image: np.ndarray) -> Tuple[float, QualityReport]:
        p = psnr(image, self.high)
        s = ssim(image, self.high)
        r = combine_reward(p, s, mode=self.reward_mode, clip=self.reward_clipping)
        return r, QualityReport(psnr_db=p, ssim=s, rmse=rmse(image, self.high),
                                reward=combine_reward(p, s))

    def _adjust_ppo(self) -> None:
        window = np.array(self.reward_window) if self.reward_window else np.zeros(1)
        ctl = self.ppo_ctl
        if window.std() > REWARD_STD_THRESHOLD:
            ctl.lr = max(ctl.lr / 2.0, LR_MIN)
            ctl.value_coef = min(ctl.value_coef * 1.25, 1.0)
        else:
            ctl.lr = min(ctl.lr * 1.1, LR_MAX)
            ctl.entropy_coef = max(ctl.entropy_coef * 0.9, 1e-4)

    def step(self, action: int) -> StepResult:
        """Execute one action; raises if the episode is already done."""
        if self.current is None:
            raise RuntimeError("environment must be reset before stepping")
        if self.done:
            raise RuntimeError("episode is done; reset before stepping again")
        action = int(action)
        if action == ActionId.APPLY_ONCE:
            self.current = self.model.denoise(self.current)
        elif action == ActionId.APPLY_MULTI:
            self.current = self.model.denoise(self.current, passes=self.multi_pass)
        elif action == ActionId.FINE_TUNE:
            if self.model_optimizer is None:
                raise RuntimeError("fine-tune action requires a model optimizer")
            fine_tune_step(self.model, self.model_optimizer, self.low, self.high)
            self.current = self.model.denoise(self.low)
        elif action == ActionId.SKIP:
            pass
        elif action == ActionId.ADJUST_PPO:
            self._adjust_ppo()
            self.current = self.model.denoise(self.low)
        else:
            raise ValueError(f"unknown action {action}")

        reward, report = self._reward(self.current)
        self.step_index += 1
        self.last_reward = reward
        self.reward_window.append(reward)
        return StepResult(state=self._state(), reward=reward, done=self.done,
                          report=report, action=action)
