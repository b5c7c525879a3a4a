"""Metric oracles: brute-force reimplementations, reward law, Wilcoxon."""

import math

import numpy as np
import pytest
import scipy.stats

from oracles import psnr_oracle, rmse_oracle, ssim_oracle, wilcoxon_enumeration_oracle
from rldenoise.exceptions import InsufficientDataError
from rldenoise.metrics import (
    SSIM_C1,
    SSIM_C2,
    combine_reward,
    psnr,
    quality_report,
    reward,
    rmse,
    ssim,
    wilcoxon_signed_rank,
)


class TestPsnr:
    def test_identical_images_hit_cap(self):
        img = np.random.default_rng(0).random((8, 8))
        assert psnr(img, img.copy()) == 100.0

    def test_uniform_error_closed_form(self):
        ref = np.full((10, 10), 0.5)
        assert psnr(ref + 0.1, ref) == pytest.approx(20.0, rel=1e-12)

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            assert psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-9)

    def test_monotone_decreasing_in_mse(self):
        ref = np.random.default_rng(2).random((12, 12))
        values = [psnr(ref + eps, ref) for eps in (0.01, 0.05, 0.1, 0.3, 0.6)]
        assert values == sorted(values, reverse=True)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_invalid_max_i(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 2)), max_i=0.0)


class TestSsim:
    def test_self_similarity_is_exactly_one(self):
        rng = np.random.default_rng(3)
        for shape in [(4, 4), (7, 7), (16, 16), (9, 23)]:
            img = rng.random(shape)
            assert ssim(img, img.copy()) == 1.0

    def test_global_fallback_closed_form(self):
        # Constant images engage only the luminance term.
        x = np.full((4, 4), 0.5)
        y = np.full((4, 4), 0.7)
        expected = ((2 * 0.5 * 0.7 + SSIM_C1) * SSIM_C2) / (
            (0.25 + 0.49 + SSIM_C1) * SSIM_C2
        )
        assert ssim(x, y) == pytest.approx(expected, rel=1e-12)

    def test_matches_sliding_window_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)

    def test_small_image_uses_global_statistics(self):
        rng = np.random.default_rng(5)
        a, b = rng.random((5, 6)), rng.random((5, 6))
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 9)))


class TestRmse:
    def test_identical_images(self):
        img = np.random.default_rng(6).random((8, 8))
        assert rmse(img, img.copy()) == 0.0

    def test_uniform_error(self):
        ref = np.full((6, 6), 0.3)
        assert rmse(ref + 0.1, ref) == pytest.approx(0.1, rel=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            assert rmse(a, b) == pytest.approx(rmse_oracle(a, b), abs=1e-12)


class TestRewardLaw:
    def test_headline_component_pair(self):
        assert combine_reward(41.87, 0.9814) == pytest.approx(21.4257, abs=1e-12)

    def test_overflow_clips_to_100(self):
        assert combine_reward(250.0, 50.0) == 100.0

    def test_nan_psnr_treated_as_zero(self):
        assert combine_reward(float("nan"), 0.9) == pytest.approx(0.45)

    def test_nan_ssim_treated_as_zero(self):
        assert combine_reward(30.0, float("nan")) == pytest.approx(15.0)

    def test_negative_clips_to_zero(self):
        assert combine_reward(-5.0, -1.0) == 0.0

    def test_literal_clip_identity_and_range_under_fuzz(self):
        rng = np.random.default_rng(8)
        specials = [float("nan"), float("inf"), float("-inf"), 0.0, 100.0, -100.0]
        for _ in range(10_000):
            if rng.random() < 0.2:
                p = specials[rng.integers(len(specials))]
                s = specials[rng.integers(len(specials))]
            else:
                p = float(rng.uniform(-1e6, 1e6))
                s = float(rng.uniform(-10, 10))
            r = combine_reward(p, s)
            assert not math.isnan(r)
            assert 0.0 <= r <= 100.0
            ps = 0.0 if math.isnan(p) else p
            ss = 0.0 if math.isnan(s) else s
            assert r == max(0.0, min((ps + ss) / 2.0, 100.0))

    def test_reward_modes(self):
        assert combine_reward(30.0, 0.5, mode="psnr_only") == 30.0
        assert combine_reward(30.0, 0.5, mode="ssim_only") == 0.5
        with pytest.raises(ValueError):
            combine_reward(1.0, 1.0, mode="both")

    def test_unclipped_mode_passes_raw_value(self):
        assert combine_reward(250.0, 50.0, clip=False) == 150.0

    def test_reward_of_images_matches_components(self):
        rng = np.random.default_rng(9)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        expected = max(0.0, min((psnr(a, b) + ssim(a, b)) / 2.0, 100.0))
        assert reward(a, b) == expected

    def test_quality_report_invariants(self):
        rng = np.random.default_rng(10)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        rep = quality_report(a, b)
        assert rep.rmse == pytest.approx(math.sqrt(np.mean((a - b) ** 2)), abs=1e-12)
        assert rep.reward == combine_reward(rep.psnr_db, rep.ssim)


# -- Wilcoxon ------------------------------------------------------------------


class TestWilcoxon:
    def test_all_positive_differences(self):
        a = np.array([2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
        b = a - np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        result = wilcoxon_signed_rank(a, b)
        assert result.statistic == 21.0  # W- is therefore 0
        assert result.pvalue == pytest.approx(2.0 / 64.0, abs=1e-15)

    def test_identical_samples_raise(self):
        x = np.arange(10.0)
        with pytest.raises(InsufficientDataError):
            wilcoxon_signed_rank(x, x.copy())

    def test_too_few_nonzero_differences(self):
        a = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        b = np.array([1.0, 2.0, 3.0, 4.0, 4.5])
        with pytest.raises(InsufficientDataError):
            wilcoxon_signed_rank(a, b)

    def test_antisymmetry(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(6, 15))
            a = rng.standard_normal(n)
            b = rng.standard_normal(n)
            fwd = wilcoxon_signed_rank(a, b)
            rev = wilcoxon_signed_rank(b, a)
            assert fwd.pvalue == pytest.approx(rev.pvalue, abs=1e-12)
            total = n * (n + 1) / 2.0
            assert fwd.statistic + rev.statistic == pytest.approx(total)

    def test_exact_p_matches_enumeration_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            n = int(rng.integers(5, 11))
            a = rng.standard_normal(n)
            b = rng.standard_normal(n)
            if rng.random() < 0.3:
                # Force ties among absolute differences.
                a = np.round(a, 1)
                b = np.round(b, 1)
                if np.count_nonzero(a - b) < 5:
                    continue
            w_oracle, p_oracle = wilcoxon_enumeration_oracle(a, b)
            result = wilcoxon_signed_rank(a, b)
            assert result.statistic == pytest.approx(w_oracle, abs=1e-12)
            assert result.pvalue == pytest.approx(p_oracle, abs=1e-12)

    def test_exact_matches_scipy_without_ties(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            n = int(rng.integers(6, 20))
            a = rng.standard_normal(n)
            b = rng.standard_normal(n)
            ours = wilcoxon_signed_rank(a, b)
            ref = scipy.stats.wilcoxon(a, b, alternative="two-sided", mode="exact")
            assert ours.pvalue == pytest.approx(ref.pvalue, abs=1e-12)

    def test_large_n_uses_normal_approximation(self):
        rng = np.random.default_rng(14)
        a = rng.standard_normal(60)
        b = a + 0.3 + 0.1 * rng.standard_normal(60)
        ours = wilcoxon_signed_rank(a, b)
        ref = scipy.stats.wilcoxon(a, b, alternative="two-sided", mode="approx",
                                   correction=True)
        assert 0.0 <= ours.pvalue <= 1.0
        assert ours.pvalue == pytest.approx(ref.pvalue, rel=1e-6)
