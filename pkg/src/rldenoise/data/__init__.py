"""Synthetic phantom data pipeline and file formats."""

from rldenoise.data.phantoms import NoiseModel, PhantomSpec, add_low_dose_noise, generate_phantom
from rldenoise.data.container import (
    load_tensors,
    rng_state_from_array,
    rng_state_to_array,
    save_png,
    save_tensors,
)
from rldenoise.data.dataset import DatasetSample, gen_dataset, load_dataset, load_pair

__all__ = [
    "DatasetSample",
    "NoiseModel",
    "PhantomSpec",
    "add_low_dose_noise",
    "gen_dataset",
    "generate_phantom",
    "load_dataset",
    "load_pair",
    "load_tensors",
    "rng_state_from_array",
    "rng_state_to_array",
    "save_png",
    "save_tensors",
]
