"""Image-quality metrics, the reward law, and the Wilcoxon signed-rank test.

All functions are pure and safe for unrestricted parallel use. PSNR is
capped at 100 dB when the MSE is exactly zero; SSIM uses a 7x7 uniform
sliding window (valid positions only) with C1 = 0.01^2 and C2 = 0.03^2
for unit dynamic range, falling back to single global statistics for
images smaller than the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rldenoise.exceptions import InsufficientDataError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

REWARD_MODES = ("psnr+ssim", "psnr_only", "ssim_only")


@dataclass(frozen=True)
class QualityReport:
    """Per-image quality summary: PSNR (dB), SSIM, RMSE, and the clipped reward."""

    psnr_db: float
    ssim: float
    rmse: float
    reward: float


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes {a.shape} and {b.shape} differ")
    return a, b


def psnr(denoised: np.ndarray, reference: np.ndarray, max_i: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; 100 dB when the MSE is exactly zero."""
    if max_i <= 0:
        raise ValueError(f"max_i must be positive, got {max_i}")
    a, b = _check_pair(denoised, reference)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(max_i * max_i / mse)


def rmse(denoised: np.ndarray, reference: np.ndarray) -> float:
    a, b = _check_pair(denoised, reference)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _ssim_from_stats(mu_x, mu_y, var_x, var_y, cov_xy):
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov_xy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return num / den


def ssim(denoised: np.ndarray, reference: np.ndarray) -> float:
    """Mean local SSIM over 7x7 uniform windows, stride 1, valid positions.

    Images smaller than the window in either dimension are scored by a
    single SSIM over global statistics.
    """
    x, y = _check_pair(denoised, reference)
    if x.ndim != 2:
        raise ValueError(f"ssim expects 2-d images, got shape {x.shape}")
    if min(x.shape) < SSIM_WINDOW:
        # Raw-moment form keeps variance and covariance computed the same
        # way, so ssim(x, x) stays exactly 1.
        mu_x, mu_y = x.mean(), y.mean()
        var_x = (x * x).mean() - mu_x * mu_x
        var_y = (y * y).mean() - mu_y * mu_y
        cov = (x * y).mean() - mu_x * mu_y
        return float(_ssim_from_stats(mu_x, mu_y, var_x, var_y, cov))
    k = SSIM_WINDOW
    wx = sliding_window_view(x, (k, k))
    wy = sliding_window_view(y, (k, k))
    mu_x = wx.mean(axis=(-1, -2))
    mu_y = wy.mean(axis=(-1, -2))
    var_x = (wx * wx).mean(axis=(-1, -2)) - mu_x * mu_x
    var_y = (wy * wy).mean(axis=(-1, -2)) - mu_y * mu_y
    cov = (wx * wy).mean(axis=(-1, -2)) - mu_x * mu_y
    return float(_ssim_from_stats(mu_x, mu_y, var_x, var_y, cov).mean())


def combine_reward(psnr_db: float, ssim_value: float, mode: str = "psnr+ssim",
                   clip: bool = True) -> float:
    """Average the quality components into the step reward.

    NaN components are replaced with zero before averaging; with clipping
    on, the literal law max(0, min(R, 100)) is applied.
    """
    if mode not in REWARD_MODES:
        raise ValueError(f"unknown reward mode {mode!r}")
    p = 0.0 if math.isnan(psnr_db) else float(psnr_db)
    s = 0.0 if math.isnan(ssim_value) else float(ssim_value)
    if mode == "psnr_only":
        r = p
    elif mode == "ssim_only":
        r = s
    else:
        r = (p + s) / 2.0
    if not clip:
        return r
    return max(0.0, min(r, 100.0))


def reward(denoised: np.ndarray, reference: np.ndarray) -> float:
    """Clipped mean of PSNR (dB) and SSIM; never NaN, always within [0, 100]."""
    return combine_reward(psnr(denoised, reference), ssim(denoised, reference))


def quality_report(denoised: np.ndarray, reference: np.ndarray) -> QualityReport:
    p = psnr(denoised, reference)
    s = ssim(denoised, reference)
    return QualityReport(psnr_db=p, ssim=s, rmse=rmse(denoised, reference),
                         reward=combine_reward(p, s))


# -- Wilcoxon signed-rank test -------------------------------------------------


class WilcoxonResult(NamedTuple):
    statistic: float  # W+, the sum of ranks of positive differences a - b
    pvalue: float


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j < values.size and sorted_vals[j] == sorted_vals[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)
        i = j
    return ranks


def _exact_signed_rank_p(ranks: np.ndarray, w_plus: float) -> float:
    """Two-sided exact p by enumerating the null distribution of W+.

    Ranks are multiples of 0.5, so doubling them makes the distribution a
    lattice over integers; a subset-sum table then counts every sign
    assignment.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts += shifted
    n_assignments = 2.0 ** len(ranks)
    w2 = int(np.rint(2.0 * w_plus))
    cdf = counts[: w2 + 1].sum() / n_assignments
    sf = counts[w2:].sum() / n_assignments
    return min(1.0, 2.0 * min(cdf, sf))


def _approx_signed_rank_p(ranks: np.ndarray, w_plus: float, n: int) -> float:
    """Normal approximation with continuity and tie corrections."""
    mean_w = n * (n + 1) / 4.0
    tie_term = 0.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    for t in tie_counts:
        tie_term += (t ** 3 - t) / 48.0
    var_w = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var_w <= 0:
        return 1.0
    diff = w_plus - mean_w
    correction = 0.5 * np.sign(diff)
    z = (diff - correction) / math.sqrt(var_w)
    return math.erfc(abs(z) / math.sqrt(2.0))


def wilcoxon_signed_rank(paired_a: Sequence[float], paired_b: Sequence[float]) -> WilcoxonResult:
    """Paired two-sided Wilcoxon signed-rank test.

    Zero differences are dropped; at least 5 nonzero differences are
    required. The p-value is exact (full enumeration) for n <= 20 and a
    continuity-corrected normal approximation beyond that. Tied absolute
    differences share average ranks.
    """
    a = np.asarray(paired_a, dtype=np.float64)
    b = np.asarray(paired_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n < 5:
        raise InsufficientDataError(
            f"need at least 5 nonzero paired differences, got {n}"
        )
    ranks = _average_ranks(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    if n <= 20:
        p = _exact_signed_rank_p(ranks, w_plus)
    else:
        p = _approx_signed_rank_p(ranks, w_plus, n)
    return WilcoxonResult(statistic=w_plus, pvalue=p)
