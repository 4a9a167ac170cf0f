"""
화질 지표 계산 모듈

전선량(full-dose) 영상 대비 SSIM, PSNR을 계산하는 참조 구현.
모든 메서드는 상태를 갖지 않는 정적 메서드(static method)이다.
"""

import math

import numpy as np
from scipy import signal

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """합이 1인 size×size 가우시안 창"""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"영상 모양이 다릅니다: {a.shape} vs {b.shape}")


class MetricCalculator:
    """화질 지표 계산기 - 모든 메서드는 순수 함수(stateless)"""

    @staticmethod
    def ssim(a: np.ndarray, b: np.ndarray, dynamic_range: float = 2.0) -> float:
        """
        창 기반 SSIM (11×11 가우시안 창, σ=1.5, K1=0.01, K2=0.03)

        창이 영상 안에 완전히 들어가는 위치(valid)만 평균한다.
        [-1, 1] 정규화 영상의 기본 동적 범위는 2.0이다.

        Args:
            a, b: 같은 모양의 2D 영상
            dynamic_range: 화소값 범위 L (> 0)

        Returns:
            [-1, 1] 범위의 평균 SSIM

        Raises:
            ValueError: 모양 불일치, 창보다 작은 영상, dynamic_range <= 0
        """
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        _check_pair(a, b)
        if dynamic_range <= 0:
            raise ValueError(f"dynamic_range는 양수여야 합니다: {dynamic_range}")
        if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
            raise ValueError(f"SSIM은 {SSIM_WINDOW}×{SSIM_WINDOW} 이상의 2D 영상이 필요합니다: {a.shape}")

        window = gaussian_window()
        c1 = (SSIM_K1 * dynamic_range) ** 2
        c2 = (SSIM_K2 * dynamic_range) ** 2

        def local_mean(img):
            return signal.convolve2d(img, window, mode='valid')

        mu_a = local_mean(a)
        mu_b = local_mean(b)
        var_a = local_mean(a * a) - mu_a * mu_a
        var_b = local_mean(b * b) - mu_b * mu_b
        cov = local_mean(a * b) - mu_a * mu_b

        numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        return float(np.clip(np.mean(numerator / denominator), -1.0, 1.0))

    @staticmethod
    def mse(a: np.ndarray, b: np.ndarray) -> float:
        """평균 제곱 오차"""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        _check_pair(a, b)
        return float(np.mean((a - b) ** 2))

    @staticmethod
    def psnr(a: np.ndarray, b: np.ndarray, peak: float = 2.0) -> float:
        """
        PSNR = 10·log₁₀(peak²/MSE) [dB]

        MSE = 0 이면 inf 를 반환한다 (집계에서는 제외하고 개수를 따로 센다).
        """
        if peak <= 0:
            raise ValueError(f"peak는 양수여야 합니다: {peak}")
        error = MetricCalculator.mse(a, b)
        if error == 0.0:
            return math.inf
        return 10.0 * math.log10(peak ** 2 / error)
