"""Paired clean/noisy dataset generation, manifest, and loading.

A dataset directory holds one .ednt file per sample (sections "clean"
and "noisy") plus manifest.csv with columns seed,split,path. Train/test
seeds are disjoint by construction; the 80/20 split is by sample index.
The RLDN_THREADS environment variable caps generation parallelism.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from rldenoise.data.container import load_tensors, save_tensors
from rldenoise.data.phantoms import NoiseModel, PhantomSpec, add_low_dose_noise, generate_phantom
from rldenoise.exceptions import FormatError

PathLike = Union[str, Path]


@dataclass(frozen=True)
class DatasetSample:
    seed: int
    split: str
    path: Path


def _worker_count() -> int:
    env = os.environ.get("RLDN_THREADS", "")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _make_pair(seed: int, size: int, dose: float, sigma: float):
    clean = generate_phantom(PhantomSpec(size=size, seed=seed))
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD05E]))
    noisy = add_low_dose_noise(clean, NoiseModel(photon_count=dose, gaussian_sigma=sigma),
                               noise_rng)
    return clean, noisy


def gen_dataset(out_dir: PathLike, count: int, size: int = 32, dose: float = 300.0,
                sigma: float = 0.03, seed: int = 0) -> List[DatasetSample]:
    """Generate ``count`` paired samples under ``out_dir`` and write the manifest."""
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    if size % 4 != 0 or size < 8:
        raise ValueError(f"size must be >= 8 and divisible by 4, got {size}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    base = np.random.SeedSequence(seed)
    sample_seeds = [int(s.generate_state(1)[0]) for s in base.spawn(count)]
    n_train = round(0.8 * count)
    samples = []
    for idx, sample_seed in enumerate(sample_seeds):
        split = "train" if idx < n_train else "test"
        samples.append(DatasetSample(seed=sample_seed, split=split,
                                     path=out / f"pair_{idx:04d}.ednt"))

    def write_sample(sample: DatasetSample) -> None:
        clean, noisy = _make_pair(sample.seed, size, dose, sigma)
        save_tensors(sample.path, {"clean": clean, "noisy": noisy})

    workers = _worker_count()
    if workers == 1:
        for sample in samples:
            write_sample(sample)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(write_sample, samples))

    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "split", "path"])
        for sample in samples:
            writer.writerow([sample.seed, sample.split, sample.path.name])
    return samples


def load_dataset(data_dir: PathLike) -> List[DatasetSample]:
    """Read manifest.csv and return sample descriptors."""
    data_dir = Path(data_dir)
    manifest = data_dir / "manifest.csv"
    if not manifest.exists():
        raise FormatError(f"no manifest.csv under {data_dir}")
    samples = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            samples.append(DatasetSample(seed=int(row["seed"]), split=row["split"],
                                         path=data_dir / row["path"]))
    return samples


def load_pair(sample: DatasetSample):
    """Return the (noisy, clean) image pair of one sample."""
    tensors = load_tensors(sample.path)
    if "clean" not in tensors or "noisy" not in tensors:
        raise FormatError(f"sample file {sample.path} lacks clean/noisy sections")
    return tensors["noisy"], tensors["clean"]
