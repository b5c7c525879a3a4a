"""Synthetic ellipse phantoms and transmitted-count low-dose noise.

The phantom stands in for anatomical content: a dim background plus a
handful of overlapping constant-intensity ellipses, clamped to [0, 1].
The noise model runs each pixel through a Beer-Lambert style transmission
simulation: counts ~ Poisson(N0 * exp(-mu * x)) with mu = 4, inverted
back to intensity, plus additive Gaussian read noise. Lower N0 means a
lower dose and a noisier image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ATTENUATION_MU = 4.0
BACKGROUND = 0.05


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one synthetic phantom; deterministic per seed."""

    size: int = 32
    n_ellipses: int = 5
    intensity_low: float = 0.1
    intensity_high: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.size < 8 or self.size % 4 != 0:
            raise ValueError(f"size must be >= 8 and divisible by 4, got {self.size}")
        if self.n_ellipses < 0:
            raise ValueError(f"n_ellipses must be nonnegative, got {self.n_ellipses}")
        if not 0.0 <= self.intensity_low <= self.intensity_high <= 1.0:
            raise ValueError("intensity range must satisfy 0 <= low <= high <= 1")


@dataclass(frozen=True)
class NoiseModel:
    """Dose parameters: photon budget N0 and Gaussian read-noise sigma."""

    photon_count: float = 1e4
    gaussian_sigma: float = 0.01

    def __post_init__(self):
        if self.photon_count <= 0:
            raise ValueError(f"photon_count must be positive, got {self.photon_count}")
        if self.gaussian_sigma < 0:
            raise ValueError(f"gaussian_sigma must be nonnegative, got {self.gaussian_sigma}")


def generate_phantom(spec: PhantomSpec) -> np.ndarray:
    """Render the phantom described by ``spec`` as a [size, size] image in [0, 1]."""
    rng = np.random.default_rng(spec.seed)
    size = spec.size
    img = np.full((size, size), BACKGROUND)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(spec.n_ellipses):
        cx, cy = rng.uniform(0.2 * size, 0.8 * size, size=2)
        ax = rng.uniform(0.08 * size, 0.35 * size)
        ay = rng.uniform(0.08 * size, 0.35 * size)
        theta = rng.uniform(0.0, np.pi)
        intensity = rng.uniform(spec.intensity_low, spec.intensity_high)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        mask = (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
        img += intensity * mask
    return np.clip(img, 0.0, 1.0)


def add_low_dose_noise(clean: np.ndarray, nm: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Simulate a low-dose acquisition of a clean image in [0, 1]."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.min() < 0.0 or clean.max() > 1.0:
        raise ValueError("clean image must lie in [0, 1]")
    expected = nm.photon_count * np.exp(-ATTENUATION_MU * clean)
    counts = rng.poisson(expected).astype(np.float64)
    counts = np.maximum(counts, 1.0)  # zero counts would break the log inversion
    noisy = -np.log(counts / nm.photon_count) / ATTENUATION_MU
    if nm.gaussian_sigma > 0:
        noisy = noisy + rng.normal(0.0, nm.gaussian_sigma, size=noisy.shape)
    return np.clip(noisy, 0.0, 1.0)
