"""End-to-end training orchestration.

One run is fully reproducible from (config, seed): every random draw
comes from named SeedSequence streams, logs format floats via repr, and
checkpoints capture parameters, optimizer moments, PPO control, the
pending rollout buffer, the reward window, and all RNG states, so a
resumed run continues bit-identically.

Run directory layout:

    run_manifest.json   config snapshot + config hash (no timings)
    steps.csv           episode,step,action,reward,psnr,ssim,rmse
    updates.csv         per-PPO-update statistics
    eval.csv            periodic held-out evaluations
    eval_final.csv      final per-image held-out evaluation
    eval_summary.csv    final summary (means and stds)
    ckpt_ep####.ckpt    periodic checkpoints
    ckpt_final.ckpt
    timings.csv         measured wall-clock (excluded from determinism claims)
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import rldenoise
from rldenoise.data import (
    gen_dataset,
    load_dataset,
    load_pair,
    load_tensors,
    rng_state_from_array,
    rng_state_to_array,
    save_png,
    save_tensors,
)
from rldenoise.ednet import EDNet, fine_tune_step
from rldenoise.environment import DenoiseEnv
from rldenoise.exceptions import FormatError
from rldenoise.metrics import REWARD_MODES, psnr, quality_report
from rldenoise.numerics import AdamW
from rldenoise.policy import N_ACTIONS, PolicyNet
from rldenoise.ppo import PPOControl, RolloutBuffer, ppo_update

PathLike = Union[str, Path]

SUPERVISED_ACTION = -1  # action column sentinel for non-PPO training rows


@dataclass(frozen=True)
class AblationConfig:
    """Feature switches; each ablation id maps to exactly one combination."""

    use_ppo: bool = True
    fixed_passes: int = 1
    reward_clipping: bool = True
    use_gae: bool = True
    dynamic_actions: bool = True
    action_subset: Tuple[int, ...] = (0, 1, 2, 3, 4)
    skip_connections: bool = True
    reward_mode: str = "psnr+ssim"

    def action_mask(self) -> np.ndarray:
        allowed = set(self.action_subset)
        if not self.dynamic_actions:
            allowed -= {2, 4}
        mask = np.zeros(N_ACTIONS, dtype=bool)
        for a in allowed:
            mask[a] = True
        return mask


ABLATIONS: Dict[str, AblationConfig] = {
    "full": AblationConfig(),
    "A1": AblationConfig(use_ppo=False, fixed_passes=1),
    "A2": AblationConfig(use_ppo=False, fixed_passes=3),
    "A3": AblationConfig(reward_clipping=False),
    "A4": AblationConfig(use_gae=False),
    "A5": AblationConfig(dynamic_actions=False),
    "A6": AblationConfig(action_subset=(0, 1)),
    "A7": AblationConfig(skip_connections=False),
    "A8": AblationConfig(reward_mode="psnr_only"),
    "A9": AblationConfig(reward_mode="ssim_only"),
}

ABLATION_LABELS: Dict[str, str] = {
    "full": "Encoder-decoder + PPO + GAE + reward clipping",
    "A1": "Encoder-decoder only, supervised MSE loss",
    "A2": "Fixed 3-pass denoising, no PPO",
    "A3": "PPO without reward clipping",
    "A4": "PPO without generalized advantage estimation",
    "A5": "PPO with fixed action set (no dynamic adaptation)",
    "A6": "Policy limited to single/multi apply actions",
    "A7": "Encoder-decoder without skip connections",
    "A8": "Reward function using only PSNR",
    "A9": "Reward function using only SSIM",
}


@dataclass
class TrainConfig:
    """Flat, file-serializable run recipe."""

    episodes: int = 300
    max_steps: int = 8
    image_size: int = 32
    dataset_count: int = 24
    dose: float = 40.0
    sigma: float = 0.05
    data_dir: str = ""
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    ppo_lr: float = 1e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    rollout_horizon: int = 64
    update_epochs: int = 4
    minibatch: int = 16
    ednet_lr: float = 3e-3
    weight_decay: float = 1e-4
    multi_pass: int = 3
    eval_every: int = 25
    checkpoint_every: int = 50
    seed: int = 0
    ablation: str = "full"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation id {self.ablation!r}")
        if self.image_size % 4 != 0:
            raise ValueError(f"image_size must be divisible by 4, got {self.image_size}")
        if self.episodes < 1 or self.max_steps < 1:
            raise ValueError("episodes and max_steps must be positive")

    def ppo_control(self) -> PPOControl:
        return PPOControl(gamma=self.gamma, gae_lambda=self.gae_lambda,
                          clip_epsilon=self.clip_epsilon, lr=self.ppo_lr,
                          entropy_coef=self.entropy_coef, value_coef=self.value_coef,
                          rollout_horizon=self.rollout_horizon,
                          update_epochs=self.update_epochs, minibatch=self.minibatch)

    def to_file(self, path: PathLike) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path: PathLike) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} does not exist")
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(path.read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = types[key]
            if kind in ("int", int):
                kwargs[key] = int(value)
            elif kind in ("float", float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def canonical(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    def config_hash(self) -> str:
        body = f"rldenoise-{rldenoise.__version__}:{self.canonical()}"
        return hashlib.sha256(body.encode()).hexdigest()


@dataclass(frozen=True)
class RunArtifacts:
    run_dir: Path
    steps_csv: Path
    updates_csv: Path
    eval_csv: Path
    eval_final_csv: Path
    eval_summary_csv: Path
    final_checkpoint: Path
    checkpoints: List[Path]
    summary: Dict[str, float]


# -- small CSV helpers ----------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class _CsvLog:
    def __init__(self, path: Path, header: Sequence[str]):
        self.path = path
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(header)

    def row(self, values: Sequence) -> None:
        self.writer.writerow([_fmt(v) for v in values])
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


# -- evaluation ------------------------------------------------------------------


def evaluate_greedy(model: EDNet, policy: Optional[PolicyNet], config: TrainConfig,
                    pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
                    flags: Optional[AblationConfig] = None,
                    png_dir: Optional[PathLike] = None):
    """Deterministic held-out evaluation.

    With a policy, each image gets a greedy argmax rollout on a cloned
    model/control (weight changes from fine-tune actions are discarded);
    without one, a fixed-pass denoise. Returns (rows, summary).
    """
    flags = flags if flags is not None else ABLATIONS[config.ablation]
    mask = flags.action_mask()
    rows = []
    for index, (noisy, clean) in enumerate(pairs):
        if policy is None or not flags.use_ppo:
            denoised = model.denoise(noisy, passes=flags.fixed_passes)
        else:
            clone = copy.deepcopy(model)
            clone_opt = AdamW(clone.named_parameters(), lr=config.ednet_lr,
                              weight_decay=config.weight_decay)
            env = DenoiseEnv(clone, clone_opt, config.ppo_control(),
                             max_steps=config.max_steps, multi_pass=config.multi_pass,
                             reward_mode=flags.reward_mode,
                             reward_clipping=flags.reward_clipping)
            state = env.reset((noisy, clean))
            while not env.done:
                action = policy.greedy_action(state, action_mask=mask)
                state = env.step(action).state
            denoised = env.current
        report = quality_report(denoised, clean)
        rows.append({
            "image": index,
            "psnr": report.psnr_db,
            "ssim": report.ssim,
            "rmse": report.rmse,
            "noisy_psnr": psnr(noisy, clean),
        })
        if png_dir is not None:
            png_dir = Path(png_dir)
            png_dir.mkdir(parents=True, exist_ok=True)
            triptych = np.concatenate([noisy, denoised, clean], axis=1)
            save_png(png_dir / f"eval_{index:03d}.png", triptych)
    summary = {}
    for key in ("psnr", "ssim", "rmse", "noisy_psnr"):
        values = np.array([r[key] for r in rows])
        summary[f"mean_{key}"] = float(values.mean())
        summary[f"std_{key}"] = float(values.std())
    return rows, summary


# -- checkpointing ----------------------------------------------------------------


def _save_checkpoint(path: Path, model: EDNet, model_opt: AdamW,
                     policy: Optional[PolicyNet], policy_opt: Optional[AdamW],
                     ctl: PPOControl, env: Optional[DenoiseEnv],
                     buffer: Optional[RolloutBuffer], rngs: Dict[str, np.random.Generator],
                     config: TrainConfig, episode: int, update_count: int) -> None:
    flags = ABLATIONS[config.ablation]
    sections: Dict[str, np.ndarray] = {}
    sections.update(model.state_arrays("model"))
    sections.update(model_opt.state_arrays("optm"))
    if policy is not None:
        sections.update(policy.state_arrays("policy"))
        sections.update(policy_opt.state_arrays("optp"))
    sections["ctl/mutable"] = np.array([ctl.lr, ctl.entropy_coef, ctl.value_coef])
    if env is not None:
        sections["env/reward_window"] = np.array(list(env.reward_window), dtype=np.float64)
    if buffer is not None:
        sections.update(buffer.state_arrays("buffer"))
    for name, rng in rngs.items():
        sections[f"rng/{name}"] = rng_state_to_array(rng)
    sections["meta/scalars"] = np.array([
        float(episode), float(update_count), float(config.seed),
        float(model.channels), 1.0 if flags.skip_connections else 0.0,
        1.0 if policy is not None else 0.0, float(config.max_steps),
        float(config.multi_pass),
    ])
    save_tensors(path, sections)


def load_checkpoint(path: PathLike):
    """Rebuild (model, policy_or_None, meta dict, raw sections) from a checkpoint."""
    sections = load_tensors(path)
    if "meta/scalars" not in sections:
        raise FormatError(f"{path} is not a training checkpoint")
    meta_raw = sections["meta/scalars"]
    meta = {
        "episode": int(meta_raw[0]),
        "update_count": int(meta_raw[1]),
        "seed": int(meta_raw[2]),
        "channels": int(meta_raw[3]),
        "skip_connections": bool(meta_raw[4]),
        "has_policy": bool(meta_raw[5]),
        "max_steps": int(meta_raw[6]),
        "multi_pass": int(meta_raw[7]),
    }
    model = EDNet(channels=meta["channels"], skip_connections=meta["skip_connections"],
                  seed=meta["seed"])
    model.load_state_arrays(sections, "model")
    policy = None
    if meta["has_policy"]:
        policy = PolicyNet(seed=meta["seed"])
        policy.load_state_arrays(sections, "policy")
    return model, policy, meta, sections


# -- the training loop --------------------------------------------------------------


def _resolve_dataset(config: TrainConfig, out_dir: Path):
    if config.data_dir:
        data_dir = Path(config.data_dir)
        samples = load_dataset(data_dir)
    else:
        data_dir = out_dir / "data"
        gen_dataset(data_dir, count=config.dataset_count, size=config.image_size,
                    dose=config.dose, sigma=config.sigma, seed=config.seed)
        samples = load_dataset(data_dir)
    train_pairs = [load_pair(s) for s in samples if s.split == "train"]
    test_pairs = [load_pair(s) for s in samples if s.split == "test"]
    if not train_pairs or not test_pairs:
        raise ValueError("dataset must contain both train and test samples")
    return train_pairs, test_pairs


def _write_manifest(out_dir: Path, config: TrainConfig) -> None:
    manifest = {
        "package_version": rldenoise.__version__,
        "config": dataclasses.asdict(config),
        "config_hash": config.config_hash(),
        "ablation_label": ABLATION_LABELS[config.ablation],
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def train(config: TrainConfig, out_dir: PathLike,
          resume_from: Optional[PathLike] = None) -> RunArtifacts:
    """Run the full training recipe described by ``config`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, config)

    flags = ABLATIONS[config.ablation]
    train_pairs, test_pairs = _resolve_dataset(config, out_dir)

    model = EDNet(channels=1, skip_connections=flags.skip_connections, seed=config.seed)
    model_opt = AdamW(model.named_parameters(), lr=config.ednet_lr,
                      weight_decay=config.weight_decay)
    ctl = config.ppo_control()
    policy = policy_opt = None
    if flags.use_ppo:
        policy = PolicyNet(seed=config.seed)
        policy_opt = AdamW(policy.named_parameters(), lr=ctl.lr,
                           weight_decay=config.weight_decay)
    mask = flags.action_mask()

    rngs = {
        "data": np.random.default_rng(np.random.SeedSequence([config.seed, 1])),
        "act": np.random.default_rng(np.random.SeedSequence([config.seed, 2])),
        "shuffle": np.random.default_rng(np.random.SeedSequence([config.seed, 3])),
    }
    env = DenoiseEnv(model, model_opt, ctl, max_steps=config.max_steps,
                     multi_pass=config.multi_pass, reward_mode=flags.reward_mode,
                     reward_clipping=flags.reward_clipping)
    buffer = RolloutBuffer()
    start_episode = 1
    update_count = 0

    if resume_from is not None:
        sections = load_tensors(resume_from)
        model.load_state_arrays(sections, "model")
        model_opt.load_state_arrays("optm", sections)
        if policy is not None:
            policy.load_state_arrays(sections, "policy")
            policy_opt.load_state_arrays("optp", sections)
        ctl.lr, ctl.entropy_coef, ctl.value_coef = sections["ctl/mutable"]
        if "env/reward_window" in sections:
            env.reward_window.extend(sections["env/reward_window"].tolist())
        if "buffer/actions" in sections:
            buffer.load_state_arrays(sections, "buffer")
        for name in rngs:
            rngs[name] = rng_state_from_array(sections[f"rng/{name}"])
        meta_raw = sections["meta/scalars"]
        start_episode = int(meta_raw[0]) + 1
        update_count = int(meta_raw[1])

    steps_log = _CsvLog(out_dir / "steps.csv",
                        ["episode", "step", "action", "reward", "psnr", "ssim", "rmse"])
    updates_log = _CsvLog(out_dir / "updates.csv",
                          ["update", "episode", "policy_loss", "value_loss", "entropy",
                           "mean_ratio", "clip_fraction", "total_loss", "lr"])
    eval_log = _CsvLog(out_dir / "eval.csv",
                       ["episode", "image", "psnr", "ssim", "rmse", "noisy_psnr"])
    checkpoints: List[Path] = []
    gae_lambda = ctl.gae_lambda if flags.use_gae else 1.0

    train_started = time.perf_counter()
    for episode in range(start_episode, config.episodes + 1):
        pair = train_pairs[int(rngs["data"].integers(0, len(train_pairs)))]
        if flags.use_ppo:
            state = env.reset(pair)
            for step in range(1, config.max_steps + 1):
                action, log_prob, value = policy.act(state, rngs["act"], action_mask=mask)
                result = env.step(action)
                buffer.add(state, action, result.reward, value, log_prob, result.done)
                # Dual optimization: the per-step auxiliary MSE signal
                # trains the denoiser alongside the policy updates; action 2
                # additionally fine-tunes on demand inside the environment.
                fine_tune_step(model, model_opt, pair[0], pair[1])
                steps_log.row([episode, step, action, result.reward,
                               result.report.psnr_db, result.report.ssim,
                               result.report.rmse])
                state = result.state
                if len(buffer) >= ctl.rollout_horizon:
                    buffer.bootstrap_value = policy.value(state)
                    buffer.finalize(ctl.gamma, gae_lambda)
                    stats = ppo_update(policy, policy_opt, buffer, ctl,
                                       rngs["shuffle"], action_mask=mask)
                    update_count += 1
                    updates_log.row([update_count, episode, stats.policy_loss,
                                     stats.value_loss, stats.entropy, stats.mean_ratio,
                                     stats.clip_fraction, stats.total_loss, ctl.lr])
                    buffer.clear()
        else:
            noisy, clean = pair
            fine_tune_step(model, model_opt, noisy, clean)
            denoised = model.denoise(noisy, passes=flags.fixed_passes)
            report = quality_report(denoised, clean)
            steps_log.row([episode, 0, SUPERVISED_ACTION, report.reward,
                           report.psnr_db, report.ssim, report.rmse])

        if config.eval_every and episode % config.eval_every == 0:
            rows, _ = evaluate_greedy(model, policy, config, test_pairs, flags=flags)
            for row in rows:
                eval_log.row([episode, row["image"], row["psnr"], row["ssim"],
                              row["rmse"], row["noisy_psnr"]])
        if config.checkpoint_every and episode % config.checkpoint_every == 0:
            ckpt = out_dir / f"ckpt_ep{episode:04d}.ckpt"
            _save_checkpoint(ckpt, model, model_opt, policy, policy_opt, ctl, env,
                             buffer, rngs, config, episode, update_count)
            checkpoints.append(ckpt)
    train_seconds = time.perf_counter() - train_started

    final_ckpt = out_dir / "ckpt_final.ckpt"
    _save_checkpoint(final_ckpt, model, model_opt, policy, policy_opt, ctl, env,
                     buffer, rngs, config, config.episodes, update_count)
    checkpoints.append(final_ckpt)

    infer_started = time.perf_counter()
    final_rows, summary = evaluate_greedy(model, policy, config, test_pairs, flags=flags)
    infer_seconds = time.perf_counter() - infer_started

    final_log = _CsvLog(out_dir / "eval_final.csv",
                        ["image", "psnr", "ssim", "rmse", "noisy_psnr"])
    for row in final_rows:
        final_log.row([row["image"], row["psnr"], row["ssim"], row["rmse"],
                       row["noisy_psnr"]])
    final_log.close()
    summary_log = _CsvLog(out_dir / "eval_summary.csv",
                          sorted(summary))
    summary_log.row([summary[k] for k in sorted(summary)])
    summary_log.close()

    timings = _CsvLog(out_dir / "timings.csv",
                      ["train_seconds", "episodes", "s_per_episode", "infer_ms"])
    n_run = config.episodes - start_episode + 1
    timings.row([train_seconds, n_run, train_seconds / max(n_run, 1),
                 1000.0 * infer_seconds / max(len(test_pairs), 1)])
    timings.close()

    steps_log.close()
    updates_log.close()
    eval_log.close()
    return RunArtifacts(run_dir=out_dir, steps_csv=out_dir / "steps.csv",
                        updates_csv=out_dir / "updates.csv", eval_csv=out_dir / "eval.csv",
                        eval_final_csv=out_dir / "eval_final.csv",
                        eval_summary_csv=out_dir / "eval_summary.csv",
                        final_checkpoint=final_ckpt, checkpoints=checkpoints,
                        summary=summary)
