"""
노이즈 인덱스 선택기 속성 기반 테스트 (Property-Based Tests)

Feature: pfct-ldct-denoising
테스트 대상: utils/noise_selector.py
"""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from utils.noise_selector import NoiseSelectConfig, sample_beta_indices, select_indices
from utils.schedule_calculator import ScheduleCalculator


# === 전략(Strategy) 정의 ===

batch_sizes = st.integers(min_value=2, max_value=256)
levels = st.integers(min_value=2, max_value=1281)
seeds = st.integers(min_value=0, max_value=2**32 - 1)
modes = st.sampled_from(['beta', 'lognormal', 'uniform'])


class TestBetaIndexRange:
    """
    Property 1: Beta 인덱스 범위

    For any |B| ≥ 2, M ≥ 2 와 시드에 대해, sample_beta_indices의 결과는
    [0, M-1] 안에 있고, 최솟값 표본은 0, 최댓값 표본은 M-1 로 가야 한다.
    """

    @given(batch=batch_sizes, M=levels, seed=seeds)
    @settings(max_examples=100)
    def test_min_max_endpoints(self, batch, M, seed):
        indices = sample_beta_indices(batch, M, NoiseSelectConfig(), np.random.default_rng(seed))
        assert indices.shape == (batch,)
        assert indices.min() == 0
        assert indices.max() == M - 1


class TestPairIndexRange:
    """
    Property 2: 학습 쌍 인덱스 범위

    For any 모드, 격자 크기 M ≥ 2, 배치에 대해 select_indices 결과는 [0, M-2] 안에
    있어 (σ_i, σ_{i+1}) 쌍이 항상 격자 안에서 만들어져야 하며, 같은 시드는 같은 결과를 준다.
    """

    @given(batch=batch_sizes, M=levels, seed=seeds, mode=modes)
    @settings(max_examples=100)
    def test_pairs_inside_grid(self, batch, M, seed, mode):
        grid = ScheduleCalculator.sigma_grid(M)
        cfg = NoiseSelectConfig(mode=mode)
        first = select_indices(batch, grid, cfg, np.random.default_rng(seed))
        second = select_indices(batch, grid, cfg, np.random.default_rng(seed))

        np.testing.assert_array_equal(first, second)
        assert first.min() >= 0
        assert first.max() <= M - 2
        assert np.all(grid.sigmas[first] < grid.sigmas[first + 1])
