# utils/perturbation_kernel.py
"""PFGM++ 섭동 커널 샘플러

N차원 데이터를 N+D차원의 전하로 보는 PFGM++ 커널은 균일한 각도 성분과
두꺼운 꼬리를 가진 반지름 성분으로 나뉜다. 증강 차원 D는 실제로 만들지 않고
반지름 파라미터 r = σ·√D 로만 들어온다.

반지름 R의 밀도:  p_r(R) ∝ R^(N-1) / (R² + r²)^((N+D)/2)
샘플링은 B ~ Beta(N/2, D/2) 를 뽑아 R = r·√(B/(1-B)) 로 변환한다.
r을 마지막에 곱하므로 같은 난수 스트림에서 r에 대한 척도 등변성이 정확히 성립한다.

모든 함수는 명시적으로 받은 numpy Generator만 소비한다 (공유 상태 없음).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentedKernelSpec:
    """커널 기하 (N, D, σ). r은 저장하지 않고 항상 다시 계산한다."""

    data_dim: int
    aug_dim: int
    sigma: float

    def __post_init__(self):
        if int(self.data_dim) != self.data_dim or self.data_dim < 1:
            raise ValueError(f"data_dim은 1 이상의 정수여야 합니다: {self.data_dim!r}")
        if int(self.aug_dim) != self.aug_dim or self.aug_dim < 1:
            raise ValueError(f"aug_dim은 1 이상의 정수여야 합니다: {self.aug_dim!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma는 양의 유한 실수여야 합니다: {self.sigma!r}")

    @property
    def radius(self) -> float:
        """하이퍼파라미터 전이 r = σ·√D"""
        return self.sigma * math.sqrt(self.aug_dim)


@dataclass
class PerturbationDraw:
    """같은 각도 v를 공유하는 인접 섭동 한 쌍 (배치 차원 허용)

    angle: (N,) 또는 (B, N) 단위 벡터
    radius_lo / radius_hi: 스칼라 또는 (B,)
    sigma_lo / sigma_hi: 스칼라 또는 (B,), sigma_lo < sigma_hi
    """

    angle: np.ndarray
    radius_lo: np.ndarray
    radius_hi: np.ndarray
    sigma_lo: np.ndarray
    sigma_hi: np.ndarray


def _beta_odds(data_dim: int, aug_dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """√(B/(1-B)), B ~ Beta(N/2, D/2). B가 정확히 1로 반올림되면 그 표본만 다시 뽑는다."""
    b = rng.beta(data_dim / 2.0, aug_dim / 2.0, size=count)
    saturated = b >= 1.0
    while np.any(saturated):
        b[saturated] = rng.beta(data_dim / 2.0, aug_dim / 2.0, size=int(saturated.sum()))
        saturated = b >= 1.0
    return np.sqrt(b / (1.0 - b))


def sample_radius(spec: AugmentedKernelSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    방사 분포 p(R) ∝ R^(N-1)/(R²+r²)^((N+D)/2) 에서 반지름 R을 count개 독립 추출한다.

    Args:
        spec: 커널 기하
        count: 추출 개수 (1 이상)
        rng: 난수 스트림

    Returns:
        (count,) float64 배열, 모두 0 이상

    Raises:
        ValueError: r이 유한하지 않거나 count < 1
    """
    r = spec.radius
    if not math.isfinite(r):
        raise ValueError(f"반지름 파라미터 r이 유한하지 않습니다: {r!r}")
    if count < 1:
        raise ValueError(f"count는 1 이상이어야 합니다: {count}")

    return _beta_odds(spec.data_dim, spec.aug_dim, count, rng) * r


def sample_uniform_angles(data_dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    N차원 단위 구면에서 균일한 각도 v = u/‖u‖₂ 를 count개 뽑는다.

    노름이 0으로 언더플로된 행(확률 0 사건)은 그 행만 다시 뽑는다.

    Returns:
        (count, N) 배열, 각 행의 노름은 1
    """
    if data_dim < 1:
        raise ValueError(f"N은 1 이상이어야 합니다: {data_dim}")

    u = rng.standard_normal((count, data_dim))
    norms = np.linalg.norm(u, axis=1)
    degenerate = norms == 0.0
    while np.any(degenerate):
        u[degenerate] = rng.standard_normal((int(degenerate.sum()), data_dim))
        norms = np.linalg.norm(u, axis=1)
        degenerate = norms == 0.0
    return u / norms[:, None]


def sample_uniform_angle(data_dim: int, rng: np.random.Generator) -> np.ndarray:
    """단일 균일 각도 (N,)"""
    return sample_uniform_angles(data_dim, 1, rng)[0]


def draw_pair_batch(
    data_dim: int,
    sigma_lo,
    sigma_hi,
    aug_dim: int,
    rng: np.random.Generator,
    coupled: bool = False,
) -> PerturbationDraw:
    """
    배치 단위 인접 섭동 추출. 행마다 각도 하나를 뽑아 두 반지름에 공유한다.

    R_lo, R_hi는 기본적으로 독립 추출한다. coupled=True이면 Beta 표본 하나를
    두 반지름이 공유한다 (분산 감소 실험용).

    추출 순서(재현성 계약): 각도 → R_hi → R_lo
    """
    sigma_lo = np.atleast_1d(np.asarray(sigma_lo, dtype=np.float64))
    sigma_hi = np.atleast_1d(np.asarray(sigma_hi, dtype=np.float64))
    if sigma_lo.shape != sigma_hi.shape:
        raise ValueError(f"σ 배열 모양이 다릅니다: {sigma_lo.shape} vs {sigma_hi.shape}")
    if np.any(sigma_lo <= 0) or not np.all(np.isfinite(sigma_hi)):
        raise ValueError("σ 값은 양의 유한 실수여야 합니다")
    if np.any(sigma_lo >= sigma_hi):
        bad = int(np.argmax(sigma_lo >= sigma_hi))
        raise ValueError(
            f"sigma_lo < sigma_hi 조건 위반: index={bad}, "
            f"sigma_lo={sigma_lo[bad]!r}, sigma_hi={sigma_hi[bad]!r}"
        )
    if aug_dim < 1:
        raise ValueError(f"D는 1 이상이어야 합니다: {aug_dim}")

    count = sigma_lo.shape[0]
    sqrt_d = math.sqrt(aug_dim)
    angle = sample_uniform_angles(data_dim, count, rng)

    odds_hi = _beta_odds(data_dim, aug_dim, count, rng)
    odds_lo = odds_hi if coupled else _beta_odds(data_dim, aug_dim, count, rng)

    return PerturbationDraw(
        angle=angle,
        radius_lo=odds_lo * (sigma_lo * sqrt_d),
        radius_hi=odds_hi * (sigma_hi * sqrt_d),
        sigma_lo=sigma_lo,
        sigma_hi=sigma_hi,
    )


def apply_draw(x: np.ndarray, draw: PerturbationDraw) -> tuple[np.ndarray, np.ndarray]:
    """
    (x + v·R_lo, x + v·R_hi) 를 만든다.

    x는 (N,) 이거나 (B, ...) 이며, (B, ...)인 경우 뒤쪽 차원을 펼친 길이가 N이어야 한다.
    """
    x = np.asarray(x, dtype=np.float64)
    angle = np.atleast_2d(draw.angle)
    batch = angle.shape[0]
    flat = x.reshape(batch, -1)
    if flat.shape[1] != angle.shape[1]:
        raise ValueError(f"데이터 차원 불일치: x={flat.shape[1]}, angle={angle.shape[1]}")

    r_lo = np.atleast_1d(draw.radius_lo)[:, None]
    r_hi = np.atleast_1d(draw.radius_hi)[:, None]
    x_lo = (flat + angle * r_lo).reshape(x.shape)
    x_hi = (flat + angle * r_hi).reshape(x.shape)
    return x_lo, x_hi


def perturb_pair(
    x: np.ndarray,
    sigma_lo: float,
    sigma_hi: float,
    aug_dim: int,
    rng: np.random.Generator,
    coupled: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """
    깨끗한 표본 x 하나에 대해 같은 각도를 공유하는 인접 섭동 (x_lo, x_hi)를 만든다.

    Raises:
        ValueError: sigma_lo >= sigma_hi, x에 유한하지 않은 값
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("x에 유한하지 않은 값이 있습니다")
    if not sigma_lo < sigma_hi:
        raise ValueError(f"sigma_lo < sigma_hi 조건 위반: {sigma_lo!r} >= {sigma_hi!r}")

    draw = draw_pair_batch(x.size, [sigma_lo], [sigma_hi], aug_dim, rng, coupled=coupled)
    x_lo, x_hi = apply_draw(x.reshape(1, -1), draw)
    return x_lo.reshape(x.shape), x_hi.reshape(x.shape)


# === 검증용 오라클 (방사 밀도 직접 적분) ===

def radial_log_density(radius, data_dim: int, aug_dim: int, r: float) -> np.ndarray:
    """정규화하지 않은 log p_r(R). 큰 N, D에서도 넘치지 않도록 로그 공간에서 계산한다."""
    radius = np.asarray(radius, dtype=np.float64)
    tail = -0.5 * (data_dim + aug_dim) * np.log(radius ** 2 + r ** 2)
    if data_dim == 1:
        return tail
    with np.errstate(divide='ignore'):
        return (data_dim - 1) * np.log(radius) + tail


def radial_cdf_table(
    data_dim: int, aug_dim: int, r: float = 1.0, grid_size: int = 2000, tail: float = 1e-4
) -> tuple[np.ndarray, np.ndarray]:
    """
    방사 밀도를 적응 구적(scipy.integrate.quad)으로 구간별 적분해 CDF 표를 만든다.

    적분 상한은 R_99.99 (Beta 분위수로 구한 위치)이며 [0, 상한]에서 정규화한다.

    Returns:
        (반지름 격자, CDF 값) — np.interp로 보간해 쓴다
    """
    b_hi = stats.beta.ppf(1.0 - tail, data_dim / 2.0, aug_dim / 2.0)
    upper = r * math.sqrt(b_hi / (1.0 - b_hi))

    # 최빈값 R² = (N-1)r²/(D+1) 의 로그 밀도를 빼 지수 계산이 넘치지 않게 한다
    mode = r * math.sqrt((data_dim - 1) / (aug_dim + 1))
    log_peak = float(radial_log_density(mode, data_dim, aug_dim, r))

    def density(radius):
        return float(np.exp(radial_log_density(radius, data_dim, aug_dim, r) - log_peak))

    grid = np.linspace(0.0, upper, grid_size + 1)
    pieces = np.empty(grid_size)
    for j in range(grid_size):
        pieces[j], _ = integrate.quad(density, grid[j], grid[j + 1], limit=100)

    cdf = np.concatenate([[0.0], np.cumsum(pieces)])
    cdf /= cdf[-1]
    return grid, cdf
