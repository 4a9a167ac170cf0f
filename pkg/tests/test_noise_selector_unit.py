"""
노이즈 인덱스 선택기 단위 테스트 (Unit Tests)

Feature: pfct-ldct-denoising
테스트 대상: utils/noise_selector.py
"""

from unittest.mock import MagicMock

import numpy as np
import pytest
from scipy import stats

from utils.noise_selector import (
    NoiseSelectConfig,
    lognormal_probabilities,
    sample_beta_indices,
    sample_lognormal_indices,
    sample_uniform_indices,
    select_indices,
)
from utils.schedule_calculator import ScheduleCalculator


def _fixed_beta_rng(draws):
    """rng.beta 가 정해진 값을 돌려주는 가짜 난수 스트림"""
    rng = MagicMock()
    rng.beta.return_value = np.array(draws, dtype=np.float64)
    return rng


class TestNoiseSelectConfig:

    def test_defaults(self):
        cfg = NoiseSelectConfig()
        assert (cfg.alpha, cfg.beta, cfg.mode) == (1.5, 5.0, 'beta')
        assert (cfg.P_mean, cfg.P_std) == (-1.1, 2.0)

    @pytest.mark.parametrize("kwargs", [
        {'alpha': 0.0},
        {'beta': -1.0},
        {'P_std': 0.0},
        {'mode': 'curriculum'},
    ])
    def test_invalid_config_rejected(self, kwargs):
        with pytest.raises(ValueError):
            NoiseSelectConfig(**kwargs)


class TestSampleBetaIndices:
    """배치 min-max 정규화 Beta 선택"""

    def test_hand_evaluated_mapping(self):
        """B = {0.125, 0.375, 0.625}, M = 11 → {0, 5, 10} (이진 소수라 반올림 없음)"""
        indices = sample_beta_indices(3, 11, NoiseSelectConfig(), _fixed_beta_rng([0.125, 0.375, 0.625]))
        assert indices.tolist() == [0, 5, 10]

    def test_extremes_map_to_endpoints(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            indices = sample_beta_indices(16, 30, NoiseSelectConfig(), rng)
            assert indices.min() == 0
            assert indices.max() == 29

    def test_degenerate_batch_returns_zeros(self):
        indices = sample_beta_indices(4, 11, NoiseSelectConfig(), _fixed_beta_rng([0.2] * 4))
        assert indices.tolist() == [0, 0, 0, 0]

    def test_batch_of_one_points_to_uniform_mode(self):
        with pytest.raises(ValueError, match="uniform"):
            sample_beta_indices(1, 11, NoiseSelectConfig(), np.random.default_rng(0))

    def test_uniform_beta_interior_histogram_is_flat(self):
        """α = β = 1, |B| = 4096, M = 20 에서 내부 인덱스 히스토그램은 평탄하다"""
        cfg = NoiseSelectConfig(alpha=1.0, beta=1.0)
        indices = sample_beta_indices(4096, 20, cfg, np.random.default_rng(3))
        counts = np.bincount(indices, minlength=20)[1:19]
        assert stats.chisquare(counts).pvalue > 0.01

    def test_default_shape_prefers_low_indices(self):
        rng = np.random.default_rng(4)
        indices = np.concatenate([sample_beta_indices(100, 100, NoiseSelectConfig(), rng) for _ in range(1000)])
        assert indices.mean() < 99 / 2

    def test_same_seed_same_indices(self):
        a = sample_beta_indices(32, 50, NoiseSelectConfig(), np.random.default_rng(9))
        b = sample_beta_indices(32, 50, NoiseSelectConfig(), np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)


class TestLognormalIndices:
    """로그정규 선택"""

    def test_two_levels_always_index_zero(self):
        grid = ScheduleCalculator.sigma_grid(2)
        indices = sample_lognormal_indices(100, grid, NoiseSelectConfig(mode='lognormal'), np.random.default_rng(0))
        assert set(indices.tolist()) == {0}

    def test_probabilities_sum_to_one(self):
        grid = ScheduleCalculator.sigma_grid(18)
        probs = lognormal_probabilities(grid, NoiseSelectConfig(mode='lognormal'))
        assert len(probs) == 17
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all(probs >= 0)

    def test_empirical_frequencies_match_probabilities(self):
        grid = ScheduleCalculator.sigma_grid(18)
        cfg = NoiseSelectConfig(mode='lognormal')
        probs = lognormal_probabilities(grid, cfg)
        draws = 1_000_000
        indices = sample_lognormal_indices(draws, grid, cfg, np.random.default_rng(5))
        observed = np.bincount(indices, minlength=len(probs))
        expected = probs * draws
        keep = expected > 5
        observed_kept = observed[keep]
        expected_kept = expected[keep] * observed_kept.sum() / expected[keep].sum()
        assert stats.chisquare(observed_kept, expected_kept).pvalue > 0.01


class TestSelectIndices:
    """학습 쌍용 인덱스 선택"""

    @pytest.mark.parametrize("mode", ['beta', 'lognormal', 'uniform'])
    def test_indices_form_valid_pairs(self, mode):
        grid = ScheduleCalculator.sigma_grid(11)
        rng = np.random.default_rng(0)
        for _ in range(100):
            indices = select_indices(16, grid, NoiseSelectConfig(mode=mode), rng)
            assert indices.min() >= 0
            assert indices.max() <= grid.size - 2

    def test_beta_mode_reaches_last_interval(self):
        grid = ScheduleCalculator.sigma_grid(11)
        indices = select_indices(16, grid, NoiseSelectConfig(), np.random.default_rng(0))
        assert indices.max() == 9

    def test_two_level_grid_beta_mode(self):
        grid = ScheduleCalculator.sigma_grid(2)
        indices = select_indices(8, grid, NoiseSelectConfig(), np.random.default_rng(0))
        assert indices.tolist() == [0] * 8

    def test_uniform_mode_allows_batch_of_one(self):
        grid = ScheduleCalculator.sigma_grid(11)
        indices = select_indices(1, grid, NoiseSelectConfig(mode='uniform'), np.random.default_rng(0))
        assert indices.shape == (1,)

    def test_uniform_indices_range(self):
        indices = sample_uniform_indices(1000, 5, np.random.default_rng(0))
        assert set(indices.tolist()) == {0, 1, 2, 3, 4}
