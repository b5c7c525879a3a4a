"""Ablation matrix runner and comparison-table assembly.

Every ablation run shares the dataset and master seed with the full
model. The comparison table mirrors the structure
(config, PSNR, SSIM, RMSE, Wilcoxon p, train s/episode, infer ms);
the paired Wilcoxon test runs on per-image PSNR differences between the
full model and each variant on the same held-out images. A degenerate
pairing (all-zero differences) is reported as the sentinel p = 1.0.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from rldenoise.data import gen_dataset
from rldenoise.exceptions import InsufficientDataError
from rldenoise.metrics import wilcoxon_signed_rank
from rldenoise.trainer import ABLATION_LABELS, ABLATIONS, RunArtifacts, TrainConfig, train

PathLike = Union[str, Path]

COMPARISON_HEADER = ["config", "label", "psnr", "ssim", "rmse", "wilcoxon_p",
                     "train_s_per_episode", "infer_ms"]


def _read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _per_image_psnr(run_dir: Path) -> List[float]:
    return [float(row["psnr"]) for row in _read_csv(run_dir / "eval_final.csv")]


def _run_row(run_dir: Path, full_psnr: Optional[List[float]]) -> Dict[str, str]:
    import json

    manifest = json.loads((run_dir / "run_manifest.json").read_text())
    ablation_id = manifest["config"]["ablation"]
    summary = _read_csv(run_dir / "eval_summary.csv")[0]
    timing = _read_csv(run_dir / "timings.csv")[0]
    if ablation_id == "full" or full_psnr is None:
        p_repr = ""
    else:
        variant = _per_image_psnr(run_dir)
        try:
            p_repr = repr(wilcoxon_signed_rank(full_psnr, variant).pvalue)
        except InsufficientDataError:
            p_repr = repr(1.0)  # degenerate pairing sentinel
    return {
        "config": ablation_id,
        "label": ABLATION_LABELS[ablation_id],
        "psnr": summary["mean_psnr"],
        "ssim": summary["mean_ssim"],
        "rmse": summary["mean_rmse"],
        "wilcoxon_p": p_repr,
        "train_s_per_episode": timing["s_per_episode"],
        "infer_ms": timing["infer_ms"],
    }


def write_comparison(run_dirs: List[Path], out_file: PathLike) -> List[Dict[str, str]]:
    """Merge run directories into one comparison CSV; full model row first."""
    full_dirs = []
    other_dirs = []
    import json

    for run_dir in run_dirs:
        manifest = json.loads((Path(run_dir) / "run_manifest.json").read_text())
        if manifest["config"]["ablation"] == "full":
            full_dirs.append(Path(run_dir))
        else:
            other_dirs.append(Path(run_dir))
    full_psnr = _per_image_psnr(full_dirs[0]) if full_dirs else None
    rows = [_run_row(d, full_psnr) for d in full_dirs + sorted(other_dirs)]
    with open(out_file, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARISON_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows


def run_ablation(base_config: TrainConfig, ids: Iterable[str], out_dir: PathLike):
    """Train the full model plus the requested variants and compare them.

    Returns (comparison rows, {id: RunArtifacts}).
    """
    ids = list(ids)
    for ablation_id in ids:
        if ablation_id not in ABLATIONS:
            raise ValueError(f"unknown ablation id {ablation_id!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # One dataset shared by every variant.
    if base_config.data_dir:
        data_dir = base_config.data_dir
    else:
        data_dir = str(out_dir / "data")
        gen_dataset(data_dir, count=base_config.dataset_count,
                    size=base_config.image_size, dose=base_config.dose,
                    sigma=base_config.sigma, seed=base_config.seed)

    artifacts: Dict[str, RunArtifacts] = {}
    run_ids = ["full"] + [i for i in ids if i != "full"]
    for ablation_id in run_ids:
        config = dataclasses.replace(base_config, ablation=ablation_id, data_dir=data_dir)
        artifacts[ablation_id] = train(config, out_dir / ablation_id)
    rows = write_comparison([artifacts[i].run_dir for i in run_ids],
                            out_dir / "comparison.csv")
    return rows, artifacts
