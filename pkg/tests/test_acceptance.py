"""Acceptance gate: every criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS/FAIL
line per criterion. The learning experiments (criteria 6 and 7) train
real models and dominate the runtime; everything else finishes in
seconds.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from oracles import gae_oracle, psnr_oracle, rmse_oracle, ssim_oracle, wilcoxon_enumeration_oracle
from rldenoise.ablation import write_comparison
from rldenoise.data import gen_dataset
from rldenoise.ednet import EDNet
from rldenoise.metrics import combine_reward, psnr, rmse, ssim, wilcoxon_signed_rank
from rldenoise.numerics import (
    AdamW,
    Tensor,
    batch_norm2d,
    clamp,
    conv2d,
    conv_transpose2d,
    exp,
    finite_difference_grad,
    linear,
    log_softmax,
    mean,
    minimum,
    mse_loss,
    relative_error,
    relu,
    softmax,
    tsum,
)
from rldenoise.policy import PolicyNet
from rldenoise.ppo import PPOControl, clipped_objective, compute_gae, ppo_loss
from rldenoise.trainer import TrainConfig, train

GRAD_TOL = 1e-4
N_OP_TRIALS = 20
ACCEPTANCE_SEEDS = (0, 1, 2)


def report_line(criterion: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} — {detail}")


# -- shared training fixtures ----------------------------------------------------


@pytest.fixture(scope="session")
def seed_runs(tmp_path_factory):
    """Three default-config training runs (criterion 6); wall time recorded."""
    root = tmp_path_factory.mktemp("acceptance_runs")
    runs = {}
    started = time.perf_counter()
    for seed in ACCEPTANCE_SEEDS:
        config = TrainConfig(seed=seed)
        runs[seed] = (config, train(config, root / f"seed{seed}"))
    wall = time.perf_counter() - started
    return runs, wall


@pytest.fixture(scope="session")
def ablation_runs(seed_runs, tmp_path_factory):
    """A1/A3/A8 sharing the seed-0 budget, dataset, and master seed."""
    runs, _ = seed_runs
    base_config, full_artifacts = runs[ACCEPTANCE_SEEDS[0]]
    shared_data = full_artifacts.run_dir / "data"
    root = tmp_path_factory.mktemp("acceptance_ablations")
    out = {"full": full_artifacts}
    for ablation_id in ("A1", "A3", "A8"):
        config = dataclasses.replace(base_config, ablation=ablation_id,
                                     data_dir=str(shared_data))
        out[ablation_id] = train(config, root / ablation_id)
    return out, root


# -- criterion 1: gradient correctness -------------------------------------------


def _check_grads(build_loss, tensors, h=1e-5, indices_per_tensor=None):
    for t in tensors:
        t.zero_grad()
    build_loss().backward()
    worst = 0.0
    for t in tensors:
        if indices_per_tensor is None:
            num = finite_difference_grad(lambda: build_loss().item(), t.data, h=h)
            worst = max(worst, relative_error(t.grad, num))
        else:
            flat = t.data.reshape(-1)
            rng = np.random.default_rng(flat.size)
            picks = rng.choice(flat.size, size=min(indices_per_tensor, flat.size),
                               replace=False)
            idx = [np.unravel_index(p, t.data.shape) for p in picks]
            num = finite_difference_grad(lambda: build_loss().item(), t.data, h=h,
                                         indices=idx)
            ana = np.array([t.grad[i] for i in idx])
            worst = max(worst, relative_error(ana, num))
    return worst


class TestCriterion1Gradients:
    def test_op_level_finite_differences(self):
        worst = 0.0
        for trial in range(N_OP_TRIALS):
            rng = np.random.default_rng(9000 + trial)
            stride = int(rng.integers(1, 3))

            x = Tensor(rng.standard_normal((2, 7, 7)), requires_grad=True)
            w = Tensor(0.4 * rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
            b = Tensor(0.2 * rng.standard_normal(3), requires_grad=True)
            worst = max(worst, _check_grads(
                lambda: tsum(conv2d(x, w, b, stride=stride, padding=1)), [x, w, b]))

            xt = Tensor(rng.standard_normal((3, 5, 5)), requires_grad=True)
            wt = Tensor(0.4 * rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
            bt = Tensor(0.2 * rng.standard_normal(2), requires_grad=True)
            worst = max(worst, _check_grads(
                lambda: tsum(conv_transpose2d(xt, wt, bt, stride=2, padding=1,
                                              output_padding=1)), [xt, wt, bt]))

            xb = Tensor(rng.standard_normal((2, 6, 6)), requires_grad=True)
            gb = Tensor(0.5 + rng.random(2), requires_grad=True)
            bb = Tensor(rng.standard_normal(2), requires_grad=True)
            tb = rng.random((2, 6, 6))
            worst = max(worst, _check_grads(
                lambda: mse_loss(batch_norm2d(xb, gb, bb, np.zeros(2), np.ones(2),
                                              training=True), Tensor(tb)), [xb, gb, bb]))

            base = rng.standard_normal((4, 6))
            base[np.abs(base) < 1e-2] += 0.05
            xl = Tensor(base, requires_grad=True)
            wl = Tensor(rng.standard_normal((5, 6)), requires_grad=True)
            bl = Tensor(rng.standard_normal(5), requires_grad=True)
            tl = rng.standard_normal((4, 5))
            worst = max(worst, _check_grads(
                lambda: mse_loss(log_softmax(relu(linear(xl, wl, bl))), Tensor(tl)),
                [xl, wl, bl]))

            a = Tensor(rng.standard_normal(8), requires_grad=True)
            c = Tensor(rng.standard_normal(8), requires_grad=True)
            worst = max(worst, _check_grads(
                lambda: mean(minimum(exp(a * 0.3), clamp(c, -0.7, 0.7))), [a, c]))

        ok = worst < GRAD_TOL
        report_line("1 (gradient correctness, ops)",
                    ok, f"worst relative error {worst:.2e} over {N_OP_TRIALS} trials/op")
        assert ok

    def test_composed_ednet_loss_finite_differences(self):
        worst = 0.0
        for trial in range(3):
            model = EDNet(channels=1, seed=200 + trial).train()
            rng = np.random.default_rng(300 + trial)
            x = Tensor(rng.random((1, 8, 8)))
            y = Tensor(rng.random((1, 8, 8)))
            params = list(model.named_parameters().values())

            def build():
                return mse_loss(model.forward(x), y)

            worst = max(worst, _check_grads(build, params, indices_per_tensor=6))
        ok = worst < GRAD_TOL
        report_line("1 (gradient correctness, composed EDNet loss)",
                    ok, f"worst relative error {worst:.2e}")
        assert ok

    def test_composed_policy_loss_finite_differences(self):
        worst = 0.0
        for trial in range(3):
            policy = PolicyNet(d_state=5, hidden=(12, 10), seed=400 + trial)
            rng = np.random.default_rng(500 + trial)
            states = rng.random((4, 5))
            actions, old_logp = [], []
            for s in states:
                a, lp, _ = policy.act(s, rng)
                actions.append(a)
                old_logp.append(lp)
            actions = np.array(actions)
            old_logp = np.array(old_logp) + rng.normal(0, 0.05, 4)
            adv = rng.standard_normal(4)
            returns = rng.uniform(0, 10, 4)
            ctl = PPOControl()

            def build():
                loss, _ = ppo_loss(policy, states, actions, old_logp, adv, returns, ctl)
                return loss

            worst = max(worst, _check_grads(
                build, list(policy.named_parameters().values()), h=1e-6))
        ok = worst < GRAD_TOL
        report_line("1 (gradient correctness, composed policy loss)",
                    ok, f"worst relative error {worst:.2e}")
        assert ok


# -- criterion 2: metric oracles --------------------------------------------------


class TestCriterion2MetricOracles:
    def test_brute_force_agreement(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(100):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            worst = max(worst,
                        abs(psnr(a, b) - psnr_oracle(a, b)),
                        abs(ssim(a, b) - ssim_oracle(a, b)),
                        abs(rmse(a, b) - rmse_oracle(a, b)))
        identity_ok = all(ssim(img, img.copy()) == 1.0 and rmse(img, img.copy()) == 0.0
                          for img in [rng.random((16, 16)) for _ in range(5)])
        ok = worst < 1e-9 and identity_ok
        report_line("2 (metric oracles)", ok,
                    f"worst |impl - oracle| {worst:.2e} over 100 pairs; identities "
                    f"{'exact' if identity_ok else 'BROKEN'}")
        assert ok


# -- criterion 3: reward law -------------------------------------------------------


class TestCriterion3RewardLaw:
    def test_fuzzed_reward_range_and_clip_identity(self):
        rng = np.random.default_rng(43)
        specials = [float("nan"), float("inf"), float("-inf"), 0.0, 100.0, -100.0]
        violations = 0
        for _ in range(10_000):
            if rng.random() < 0.25:
                p = specials[rng.integers(len(specials))]
                s = specials[rng.integers(len(specials))]
            else:
                p = float(rng.uniform(-1e7, 1e7))
                s = float(rng.uniform(-50, 50))
            r = combine_reward(p, s)
            ps = 0.0 if math.isnan(p) else p
            ss = 0.0 if math.isnan(s) else s
            if math.isnan(r) or not 0.0 <= r <= 100.0 or r != max(0.0, min((ps + ss) / 2.0, 100.0)):
                violations += 1
        nan_rule_ok = (combine_reward(float("nan"), 0.9) == 0.45
                       and combine_reward(30.0, float("nan")) == 15.0)
        ok = violations == 0 and nan_rule_ok
        report_line("3 (reward law)", ok,
                    f"{violations} violations in 10000 fuzzed inputs; NaN-as-zero "
                    f"{'holds' if nan_rule_ok else 'BROKEN'}")
        assert ok


# -- criterion 4: GAE oracle -------------------------------------------------------


class TestCriterion4GaeOracle:
    def test_brute_force_and_limit_cases(self):
        rng = np.random.default_rng(44)
        worst = 0.0
        for _ in range(200):
            n = int(rng.integers(1, 9))
            rewards = rng.uniform(0, 30, n)
            values = rng.uniform(-5, 25, n)
            dones = (rng.random(n) < 0.3).astype(float)
            dones[-1] = float(rng.random() < 0.7)
            bootstrap = float(rng.uniform(-5, 25))
            adv, ret = compute_gae(rewards, values, dones, bootstrap, 0.99, 0.95)
            adv_o, ret_o = gae_oracle(rewards, values, dones, bootstrap, 0.99, 0.95)
            worst = max(worst, np.abs(adv - adv_o).max(), np.abs(ret - ret_o).max())

        # Limit cases: lambda = 1 is discounted Monte-Carlo, lambda -> 0 is TD.
        limit_worst = 0.0
        for _ in range(50):
            n = int(rng.integers(2, 9))
            rewards = rng.uniform(0, 30, n)
            values = rng.uniform(-5, 25, n)
            dones = (rng.random(n) < 0.3).astype(float)
            bootstrap = float(rng.uniform(-5, 25))
            adv_mc, _ = compute_gae(rewards, values, dones, bootstrap, 0.9, 1.0)
            adv_mc_o, _ = gae_oracle(rewards, values, dones, bootstrap, 0.9, 1.0)
            limit_worst = max(limit_worst, np.abs(adv_mc - adv_mc_o).max())
            adv_td, _ = compute_gae(rewards, values, dones, bootstrap, 0.99, 1e-300)
            for t in range(n):
                next_v = bootstrap if t == n - 1 else values[t + 1]
                delta = rewards[t] + 0.99 * next_v * (1 - dones[t]) - values[t]
                limit_worst = max(limit_worst, abs(adv_td[t] - delta))
        ok = worst < 1e-10 and limit_worst < 1e-10
        report_line("4 (GAE oracle)", ok,
                    f"worst |impl - oracle| {worst:.2e} on 200 rollouts; "
                    f"limit cases {limit_worst:.2e}")
        assert ok


# -- criterion 5: PPO clip arithmetic ----------------------------------------------


class TestCriterion5ClipArithmetic:
    def test_hand_computed_cases_and_unit_ratios(self):
        high = clipped_objective(Tensor(np.array([1.5])), np.array([1.0]), 0.2).data[0]
        low = clipped_objective(Tensor(np.array([0.5])), np.array([-1.0]), 0.2).data[0]
        exact_ok = (high == 1.2) and (low == -0.8)

        policy = PolicyNet(d_state=8, seed=45)
        rng = np.random.default_rng(45)
        states = rng.random((16, 8))
        actions, old_logp = [], []
        for s in states:
            a, lp, _ = policy.act(s, rng)
            actions.append(a)
            old_logp.append(lp)
        new_logp, _, _ = policy.evaluate(states, np.array(actions))
        ratios = np.exp(new_logp.data - np.array(old_logp))
        ratio_dev = np.abs(ratios - 1.0).max()
        ok = exact_ok and ratio_dev < 1e-12
        report_line("5 (PPO clip arithmetic)", ok,
                    f"surrogates ({high}, {low}) vs (1.2, -0.8); "
                    f"max |ratio-1| {ratio_dev:.1e} under unchanged parameters")
        assert ok


# -- criterion 6: learning at desk scale --------------------------------------------


def _episode_means(steps_csv):
    import csv

    per_episode = {}
    with open(steps_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            per_episode.setdefault(int(row["episode"]), []).append(float(row["reward"]))
    return [float(np.mean(per_episode[e])) for e in sorted(per_episode)]


class TestCriterion6Learning:
    def test_reward_growth_and_denoising_gain(self, seed_runs):
        runs, wall = seed_runs
        ratios, gains = [], []
        for seed, (config, artifacts) in runs.items():
            means = _episode_means(artifacts.steps_csv)
            first50 = float(np.mean(means[:50]))
            last50 = float(np.mean(means[-50:]))
            ratios.append(last50 / first50)
            gains.append(artifacts.summary["mean_psnr"] - artifacts.summary["mean_noisy_psnr"])
        mean_ratio = float(np.mean(ratios))
        mean_gain = float(np.mean(gains))
        growth_ok = mean_ratio >= 1.10
        gain_ok = mean_gain >= 2.0
        runtime_ok = wall <= 30 * 60
        report_line("6 (learning at desk scale)", growth_ok and gain_ok and runtime_ok,
                    f"reward growth x{mean_ratio:.2f} (per-seed {[f'{r:.2f}' for r in ratios]}), "
                    f"PSNR gain {mean_gain:+.2f} dB (per-seed {[f'{g:+.2f}' for g in gains]}), "
                    f"3-seed wall time {wall / 60:.1f} min")
        assert growth_ok, f"reward growth {mean_ratio:.3f} < 1.10"
        assert gain_ok, f"denoising gain {mean_gain:.2f} dB < 2 dB"
        assert runtime_ok, f"runtime {wall / 60:.1f} min > 30 min"

    def test_trained_beats_untrained_model(self, seed_runs):
        from rldenoise.data import load_dataset, load_pair
        from rldenoise.trainer import evaluate_greedy, load_checkpoint

        runs, _ = seed_runs
        config, artifacts = runs[ACCEPTANCE_SEEDS[0]]
        model, policy, _, _ = load_checkpoint(artifacts.final_checkpoint)
        samples = load_dataset(artifacts.run_dir / "data")
        pairs = [load_pair(s) for s in samples if s.split == "test"]
        untrained_model = EDNet(channels=1, seed=config.seed)
        untrained_policy = PolicyNet(seed=config.seed)
        _, trained = evaluate_greedy(model, policy, config, pairs)
        _, untrained = evaluate_greedy(untrained_model, untrained_policy, config, pairs)
        ok = trained["mean_psnr"] > untrained["mean_psnr"]
        report_line("6b (trained vs untrained)", ok,
                    f"trained {trained['mean_psnr']:.2f} dB vs untrained "
                    f"{untrained['mean_psnr']:.2f} dB")
        assert ok


# -- criterion 7: ablation directionality --------------------------------------------


class TestCriterion7Ablations:
    def test_full_model_dominates_key_ablations(self, ablation_runs, tmp_path):
        runs, root = ablation_runs
        full_psnr = runs["full"].summary["mean_psnr"]
        rows = write_comparison([runs[i].run_dir for i in ("full", "A1", "A3", "A8")],
                                tmp_path / "comparison.csv")
        by_id = {row["config"]: row for row in rows}
        details = [f"full {full_psnr:.2f} dB"]
        ok = True
        for ablation_id in ("A1", "A3", "A8"):
            variant_psnr = runs[ablation_id].summary["mean_psnr"]
            p_value = by_id[ablation_id]["wilcoxon_p"]
            details.append(f"{ablation_id} {variant_psnr:.2f} dB (p={p_value})")
            if full_psnr < variant_psnr:
                ok = False
        report_line("7 (ablation directionality)", ok, "; ".join(details))
        assert ok, "; ".join(details)

    def test_wilcoxon_matches_enumeration_for_small_n(self):
        rng = np.random.default_rng(46)
        worst = 0.0
        for _ in range(50):
            n = int(rng.integers(5, 11))
            a = rng.standard_normal(n)
            b = rng.standard_normal(n)
            if rng.random() < 0.3:
                a, b = np.round(a, 1), np.round(b, 1)
                if np.count_nonzero(a - b) < 5:
                    continue
            w_o, p_o = wilcoxon_enumeration_oracle(a, b)
            result = wilcoxon_signed_rank(a, b)
            worst = max(worst, abs(result.statistic - w_o), abs(result.pvalue - p_o))
        ok = worst < 1e-12
        report_line("7 (Wilcoxon vs enumeration, n <= 10)", ok,
                    f"worst deviation {worst:.2e} over 50 instances")
        assert ok


# -- criterion 8: reproducibility ----------------------------------------------------


class TestCriterion8Reproducibility:
    def test_bitwise_identical_runs_and_resume(self, tmp_path):
        config = TrainConfig(episodes=8, dataset_count=8, eval_every=4,
                             checkpoint_every=4, rollout_horizon=16, seed=7)
        a = train(config, tmp_path / "a")
        b = train(config, tmp_path / "b")
        artifacts = ("steps.csv", "updates.csv", "eval.csv", "eval_final.csv",
                     "eval_summary.csv", "ckpt_final.ckpt", "ckpt_ep0004.ckpt",
                     "ckpt_ep0008.ckpt")
        identical = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
                        for n in artifacts)

        train(config, tmp_path / "c", resume_from=tmp_path / "a" / "ckpt_ep0004.ckpt")
        full_rows = (tmp_path / "a" / "steps.csv").read_text().splitlines()
        resumed_rows = (tmp_path / "c" / "steps.csv").read_text().splitlines()
        tail = [r for r in full_rows[1:] if int(r.split(",")[0]) > 4]
        resume_ok = (resumed_rows[1:] == tail and
                     (tmp_path / "a" / "ckpt_final.ckpt").read_bytes() ==
                     (tmp_path / "c" / "ckpt_final.ckpt").read_bytes())
        ok = identical and resume_ok
        report_line("8 (reproducibility)", ok,
                    f"rerun bitwise identical: {identical}; resume bitwise identical: {resume_ok}")
        assert ok
