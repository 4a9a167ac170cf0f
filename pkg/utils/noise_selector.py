# utils/noise_selector.py
"""노이즈 인덱스 선택기

학습 단계마다 배치별 σ 인덱스 i를 고른다. 학습 쌍은 (σ_i, σ_{i+1})을 함께
쓰므로 학습 루프는 항상 M-1개 구간 위에서 인덱스를 뽑아 [0, M-2] 범위를 얻는다.

모드:
    beta       - 배치 min-max 정규화 Beta(α, β) 선택 (기본)
    lognormal  - 구간별 erf 차이에 비례하는 로그정규 선택
    uniform    - 균등 선택 (|B| = 1 디버깅용)
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from utils.schedule_calculator import SigmaGrid

logger = logging.getLogger(__name__)

NOISE_SELECT_MODES = ('beta', 'lognormal', 'uniform')


@dataclass
class NoiseSelectConfig:
    """노이즈 선택 설정"""

    alpha: float = 1.5
    beta: float = 5.0
    mode: str = 'beta'
    P_mean: float = -1.1
    P_std: float = 2.0

    def __post_init__(self):
        if self.mode not in NOISE_SELECT_MODES:
            raise ValueError(f"알 수 없는 노이즈 선택 모드입니다: {self.mode!r} (가능: {NOISE_SELECT_MODES})")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha, beta는 양수여야 합니다: alpha={self.alpha}, beta={self.beta}")
        if not self.P_std > 0:
            raise ValueError(f"P_std는 양수여야 합니다: {self.P_std}")


def sample_beta_indices(batch_size: int, M: int, cfg: NoiseSelectConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Beta 분포 표본을 배치 내 min-max 정규화해 [0, M-1] 인덱스로 옮긴다.

    i_j = ⌊(b_j - min B)/(max B - min B)·(M-1)⌋, 최대 원소는 M-1로 고정.

    Args:
        batch_size: |B| (2 이상)
        M: 매핑 범위 (2 이상). 학습 쌍을 만들 때는 구간 수(레벨 수 - 1)를 넘긴다.
        cfg: alpha, beta 사용
        rng: 난수 스트림

    Returns:
        (batch_size,) int64 배열

    Raises:
        ValueError: |B| < 2 (uniform 모드 안내), M < 2
    """
    if batch_size < 2:
        raise ValueError(
            f"Beta 인덱스 선택은 min-max 정규화 때문에 배치 크기 2 이상이 필요합니다 (현재 {batch_size}). "
            "배치 크기 1로 디버깅하려면 noise_select.mode=uniform 을 사용하세요."
        )
    if M < 2:
        raise ValueError(f"M은 2 이상이어야 합니다: {M}")

    draws = rng.beta(cfg.alpha, cfg.beta, size=batch_size)
    lo, hi = draws.min(), draws.max()
    if hi == lo:
        logger.warning("Beta 표본이 모두 같아 정규화할 수 없습니다. 모든 인덱스를 0으로 둡니다.")
        return np.zeros(batch_size, dtype=np.int64)

    scaled = np.floor((draws - lo) / (hi - lo) * (M - 1)).astype(np.int64)
    scaled[np.argmax(draws)] = M - 1
    return np.clip(scaled, 0, M - 1)


def lognormal_probabilities(grid: SigmaGrid, cfg: NoiseSelectConfig) -> np.ndarray:
    """
    구간 i = 0..M-2 의 선택 확률 (정규화됨)

    p(i) ∝ erf((log σ_{i+1} - P_mean)/(√2·P_std)) - erf((log σ_i - P_mean)/(√2·P_std))
    """
    if grid.size < 2:
        raise ValueError(f"σ 격자는 레벨이 2개 이상이어야 합니다: {grid.size}")

    cdf = special.erf((np.log(grid.sigmas) - cfg.P_mean) / (math.sqrt(2.0) * cfg.P_std))
    weights = np.diff(cdf)
    return weights / weights.sum()


def sample_lognormal_indices(
    batch_size: int, grid: SigmaGrid, cfg: NoiseSelectConfig, rng: np.random.Generator
) -> np.ndarray:
    """로그정규 분포로 구간 인덱스 [0, M-2]를 뽑는다"""
    probs = lognormal_probabilities(grid, cfg)
    return rng.choice(len(probs), size=batch_size, p=probs).astype(np.int64)


def sample_uniform_indices(batch_size: int, M: int, rng: np.random.Generator) -> np.ndarray:
    """[0, M-1] 균등 인덱스"""
    if M < 1:
        raise ValueError(f"M은 1 이상이어야 합니다: {M}")
    return rng.integers(0, M, size=batch_size, dtype=np.int64)


def select_indices(
    batch_size: int, grid: SigmaGrid, cfg: NoiseSelectConfig, rng: np.random.Generator
) -> np.ndarray:
    """
    학습 쌍 (σ_i, σ_{i+1})용 인덱스를 설정된 모드로 뽑는다.

    레벨이 M개인 격자에서 구간은 M-1개이므로 반환 범위는 항상 [0, M-2]이다.
    """
    intervals = grid.size - 1
    if cfg.mode == 'beta':
        indices = sample_beta_indices(batch_size, intervals, cfg, rng) if intervals >= 2 \
            else np.zeros(batch_size, dtype=np.int64)
    elif cfg.mode == 'lognormal':
        indices = sample_lognormal_indices(batch_size, grid, cfg, rng)
    else:
        indices = sample_uniform_indices(batch_size, intervals, rng)

    if indices.min() < 0 or indices.max() > grid.size - 2:
        raise ValueError(f"범위를 벗어난 σ 쌍 인덱스입니다: [{indices.min()}, {indices.max()}], M={grid.size}")
    return indices
