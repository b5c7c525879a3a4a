"""Environment contracts: the five actions, reward law, mutation discipline."""

import numpy as np
import pytest

from rldenoise.ednet import EDNet
from rldenoise.environment import ActionId, DenoiseEnv
from rldenoise.metrics import reward as reward_fn
from rldenoise.numerics import AdamW
from rldenoise.ppo import PPOControl


class IdentityDenoiser:
    """Duck-typed stand-in whose forward copies its input."""

    def __init__(self):
        self.finetune_calls = 0

    def denoise(self, image, passes=1):
        return np.asarray(image, dtype=np.float64).copy()


class RandomDenoiser:
    """Emits arbitrary images, including NaN ones, for fuzzing."""

    def __init__(self, rng):
        self.rng = rng

    def denoise(self, image, passes=1):
        roll = self.rng.random()
        if roll < 0.1:
            return np.full_like(np.asarray(image, float), np.nan)
        if roll < 0.2:
            return self.rng.uniform(-3, 3, np.asarray(image).shape)
        return self.rng.random(np.asarray(image).shape)


def make_pair(seed=0, size=32):
    rng = np.random.default_rng(seed)
    high = rng.random((size, size))
    low = np.clip(high + 0.1 * rng.standard_normal((size, size)), 0, 1)
    return low, high


def make_env(model=None, optimizer=None, **kwargs):
    ctl = kwargs.pop("ppo_ctl", PPOControl())
    model = model if model is not None else IdentityDenoiser()
    return DenoiseEnv(model, optimizer, ctl, **kwargs)


class TestReset:
    def test_skip_reward_equals_pair_reward(self):
        env = make_env()
        low, high = make_pair(1)
        env.reset((low, high))
        result = env.step(ActionId.SKIP)
        assert result.reward == reward_fn(low, high)

    def test_reset_is_deterministic(self):
        env = make_env()
        pair = make_pair(2)
        s1 = env.reset(pair)
        s2 = env.reset(pair)
        np.testing.assert_array_equal(s1, s2)

    def test_reset_clears_last_reward(self):
        env = make_env()
        env.reset(make_pair(3))
        env.step(ActionId.SKIP)
        assert env.last_reward > 0
        state = env.reset(make_pair(4))
        assert env.last_reward == 0.0
        assert state[-1] == 0.0

    def test_shape_mismatch_rejected(self):
        env = make_env()
        with pytest.raises(ValueError):
            env.reset((np.zeros((8, 8)), np.zeros((8, 12))))


class TestStep:
    def test_identity_model_is_fixed_point_under_multi(self):
        env = make_env()
        low, high = make_pair(5)
        env.reset((low, high))
        baseline = reward_fn(low, high)
        for action in (ActionId.APPLY_MULTI, ActionId.APPLY_ONCE, ActionId.APPLY_MULTI):
            result = env.step(action)
            np.testing.assert_array_equal(env.current, low)
            assert result.reward == baseline

    def test_episode_length_and_done_flag(self):
        env = make_env(max_steps=8)
        env.reset(make_pair(6))
        for i in range(8):
            result = env.step(ActionId.SKIP)
            assert result.done == (i == 7)
        with pytest.raises(RuntimeError):
            env.step(ActionId.SKIP)

    def test_ground_truth_never_mutates(self):
        model = EDNet(channels=1, seed=0)
        opt = AdamW(model.named_parameters(), lr=5e-5)
        env = make_env(model, opt)
        low, high = make_pair(7)
        high_copy = high.copy()
        env.reset((low, high))
        for action in (0, 1, 2, 3, 4, 2, 0, 1):
            env.step(action)
        np.testing.assert_array_equal(env.high, high_copy)

    def test_only_fine_tune_mutates_model(self):
        model = EDNet(channels=1, seed=1)
        opt = AdamW(model.named_parameters(), lr=5e-5)
        env = make_env(model, opt)
        env.reset(make_pair(8))
        for action in (ActionId.APPLY_ONCE, ActionId.APPLY_MULTI, ActionId.SKIP,
                       ActionId.ADJUST_PPO):
            before = model.checksum()
            env.step(action)
            assert model.checksum() == before, f"action {action} mutated the model"
        before = model.checksum()
        env.step(ActionId.FINE_TUNE)
        assert model.checksum() != before

    def test_fine_tune_refreshes_current_from_low(self):
        model = EDNet(channels=1, seed=2)
        opt = AdamW(model.named_parameters(), lr=5e-5)
        env = make_env(model, opt)
        low, high = make_pair(9)
        env.reset((low, high))
        env.step(ActionId.FINE_TUNE)
        np.testing.assert_array_equal(env.current, model.denoise(low))

    def test_unknown_action_rejected(self):
        env = make_env()
        env.reset(make_pair(10))
        with pytest.raises(ValueError):
            env.step(7)


class TestAdjustPpo:
    def test_low_variance_branch(self):
        ctl = PPOControl(lr=1e-4, entropy_coef=0.01)
        env = make_env(ppo_ctl=ctl)
        env.reset(make_pair(11))
        env.step(ActionId.ADJUST_PPO)
        assert ctl.lr == pytest.approx(1.1e-4)
        assert ctl.entropy_coef == pytest.approx(0.009)

    def test_high_variance_branch(self):
        ctl = PPOControl(lr=1e-4, value_coef=0.5)
        env = make_env(ppo_ctl=ctl)
        env.reset(make_pair(12))
        env.reward_window.extend([0.0, 20.0, 0.0, 20.0, 0.0, 20.0])
        env.step(ActionId.ADJUST_PPO)
        assert ctl.lr == pytest.approx(5e-5)
        assert ctl.value_coef == pytest.approx(0.625)

    def test_bounds_hold_under_repeated_adjustment(self):
        ctl = PPOControl(lr=1e-4)
        env = make_env(ppo_ctl=ctl, max_steps=1000)
        env.reset(make_pair(13))
        for _ in range(200):
            env.step(ActionId.ADJUST_PPO)
        assert 1e-6 <= ctl.lr <= 1e-3
        assert ctl.entropy_coef >= 1e-4
        assert ctl.value_coef <= 1.0
        env.reward_window.clear()
        for _ in range(200):
            env.reward_window.extend([0.0, 50.0] * 5)
            env.step(ActionId.ADJUST_PPO)
        assert ctl.lr >= 1e-6

    def test_adjust_only_touches_ppo_control(self):
        ctl = PPOControl()
        model = EDNet(channels=1, seed=3)
        env = make_env(model, None, ppo_ctl=ctl)
        env.reset(make_pair(14))
        before = model.checksum()
        env.step(ActionId.ADJUST_PPO)
        assert model.checksum() == before


class TestRewardRobustness:
    def test_fuzzed_steps_keep_reward_in_range(self):
        rng = np.random.default_rng(15)
        env = make_env(RandomDenoiser(rng), max_steps=10_000)
        low, high = make_pair(16, size=16)
        env.reset((low, high))
        for _ in range(10_000):
            action = int(rng.integers(0, 2)) if rng.random() < 0.8 else int(ActionId.SKIP)
            result = env.step(action)
            assert 0.0 <= result.reward <= 100.0
            assert not np.isnan(result.reward)
