"""Weight initialization helpers."""

from __future__ import annotations

import math

import numpy as np


def kaiming_uniform(shape: tuple, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Fan-in Kaiming-uniform draw with ReLU gain: U(-b, b), b = sqrt(6 / fan_in)."""
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
