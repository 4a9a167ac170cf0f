"""
이산화 스케줄 계산 모듈

학습 단계 k에 따른 노이즈 레벨 개수 M(k)와, 개수 M이 주어졌을 때의
오름차순 σ 격자를 계산하는 순수 함수 모음.
모든 메서드는 상태를 갖지 않는 정적 메서드(static method)이다.
"""

import math
from dataclasses import dataclass, field

import numpy as np

SCHEDULE_KINDS = ('sinusoidal', 'exponential')


@dataclass
class ScheduleConfig:
    """이산화 스케줄 설정 (s₀ < s₁, K ≥ 1)"""

    s0: int = 10
    s1: int = 100
    K: int = 20000
    kind: str = 'sinusoidal'

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"알 수 없는 스케줄 종류입니다: {self.kind!r} (가능: {SCHEDULE_KINDS})")
        if self.s0 < 1 or self.s1 < 1:
            raise ValueError(f"s0, s1은 양의 정수여야 합니다: s0={self.s0}, s1={self.s1}")
        if not self.s0 < self.s1:
            raise ValueError(f"s0 < s1 이어야 합니다: s0={self.s0}, s1={self.s1}")
        if self.K < 1:
            raise ValueError(f"K는 1 이상이어야 합니다: {self.K}")


@dataclass
class SigmaGrid:
    """오름차순 σ 격자. sigmas[0] = sigma_min, sigmas[-1] = sigma_max"""

    sigmas: np.ndarray = field(repr=False)
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0

    @property
    def size(self) -> int:
        return len(self.sigmas)


class ScheduleCalculator:
    """이산화 스케줄 계산기 - 모든 메서드는 순수 함수(stateless)"""

    @staticmethod
    def _check_step(cfg: ScheduleConfig, k: int):
        if not 0 <= k <= cfg.K:
            raise ValueError(f"k는 [0, {cfg.K}] 범위여야 합니다: {k}")

    @staticmethod
    def sinusoidal_steps(cfg: ScheduleConfig, k: int) -> int:
        """
        사인 이산화 스케줄 M(k)

        M(k) = ⌊min(|s₁·sin(⌊3kπ/K⌋/6) + s₀| + 1, s₁ + 1)⌋

        ⌊3kπ/K⌋/6 은 최대 ⌊3π⌋/6 = 1.5 < π/2 이므로 k에 대해 단조 비감소이다.

        Args:
            cfg: 스케줄 설정 (kind = sinusoidal)
            k: 학습 단계 [0, K]

        Returns:
            [s₀+1, s₁+1] 범위의 정수
        """
        if cfg.kind != 'sinusoidal':
            raise ValueError(f"사인 스케줄이 아닌 설정입니다: kind={cfg.kind!r}")
        ScheduleCalculator._check_step(cfg, k)

        phase = math.floor(3 * k * math.pi / cfg.K) / 6
        value = min(abs(cfg.s1 * math.sin(phase) + cfg.s0) + 1, cfg.s1 + 1)
        return int(math.floor(value))

    @staticmethod
    def exponential_steps(cfg: ScheduleConfig, k: int) -> int:
        """
        지수 이산화 스케줄 N(k) (비교 기준선)

        N(k) = ⌊min(s₀·2^(k/K′), s₁) + 1⌋,  K′ = ⌊K / (log₂⌊s₁/s₀⌋ + 1)⌋

        지수는 실수 k/K′ 를 그대로 쓴다. K가 너무 작아 정수 K′ 가 0 이 되면
        내림 없이 실수 K / (log₂⌊s₁/s₀⌋ + 1) 를 K′ 로 써서 k = K 에서 s₁ + 1 에 도달하게 한다.

        Raises:
            ValueError: s₁/s₀ < 2, k 범위 밖
        """
        if cfg.kind != 'exponential':
            raise ValueError(f"지수 스케줄이 아닌 설정입니다: kind={cfg.kind!r}")
        if cfg.s1 // cfg.s0 < 2:
            raise ValueError(f"s1/s0 >= 2 이어야 합니다 (K′ 퇴화): s0={cfg.s0}, s1={cfg.s1}")
        ScheduleCalculator._check_step(cfg, k)

        doublings = math.log2(cfg.s1 // cfg.s0) + 1
        k_prime = math.floor(cfg.K / doublings) or cfg.K / doublings
        value = min(cfg.s0 * 2.0 ** (k / k_prime), cfg.s1) + 1
        return int(math.floor(value))

    @staticmethod
    def discretization_steps(cfg: ScheduleConfig, k: int) -> int:
        """설정 종류에 따라 사인/지수 스케줄 중 하나를 계산한다"""
        if cfg.kind == 'sinusoidal':
            return ScheduleCalculator.sinusoidal_steps(cfg, k)
        return ScheduleCalculator.exponential_steps(cfg, k)

    @staticmethod
    def sigma_grid(M: int, sigma_min: float = 0.002, sigma_max: float = 80.0, rho: float = 7.0) -> SigmaGrid:
        """
        Karras 방식 오름차순 σ 격자

        σ_i = (σ_min^(1/ρ) + (i-1)/(M-1)·(σ_max^(1/ρ) - σ_min^(1/ρ)))^ρ,  i = 1..M

        끝점은 부동소수 반올림 없이 정확히 sigma_min, sigma_max 로 고정한다.

        Raises:
            ValueError: M < 2, 0 < sigma_min < sigma_max 위반, rho < 1
        """
        if M < 2:
            raise ValueError(f"M은 2 이상이어야 합니다: {M}")
        if not 0 < sigma_min < sigma_max:
            raise ValueError(f"0 < sigma_min < sigma_max 이어야 합니다: {sigma_min}, {sigma_max}")
        if rho < 1:
            raise ValueError(f"rho는 1 이상이어야 합니다: {rho}")

        lo = sigma_min ** (1.0 / rho)
        hi = sigma_max ** (1.0 / rho)
        ramp = np.arange(M, dtype=np.float64) / (M - 1)
        sigmas = (lo + ramp * (hi - lo)) ** rho
        sigmas[0] = sigma_min
        sigmas[-1] = sigma_max
        return SigmaGrid(sigmas=sigmas, sigma_min=sigma_min, sigma_max=sigma_max, rho=rho)
