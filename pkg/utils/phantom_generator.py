# utils/phantom_generator.py
"""합성 CT 팬텀 쌍 생성기

라이선스가 필요한 임상 데이터 대신 다중 타원 팬텀(합성 HU)을 그리고,
선량 감소를 영상 영역의 공간 상관 가우시안 노이즈로 근사한다.

저선량 영상 y가 전선량 영상 x에 대해 갖는 초과 노이즈의 표준편차(HU):
    σ_excess = √(σ_q²·(1/dose - 1) + σ_floor²)
여기서 σ_q/√dose 는 선량 dose에서의 양자 노이즈 진폭이다 (quantum_noise_std).
1/√dose 비율은 이 양자 진폭에만 성립하고 std(y - x) 에는 성립하지 않는다.
std(y - x) 는 전선량 영상에 이미 있는 σ_q 를 뺀 초과분이라 dose → 1 에서 σ_floor 로 줄어든다.
dose = 1, σ_floor = 0 이면 노이즈가 없어 y = x 이다.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from utils.paired_dataset import DEFAULT_HU_WINDOW, TrainingPair, normalize_hu

logger = logging.getLogger(__name__)

AIR_HU = -1000.0
SPLIT_CODES = {'train': 0, 'val': 1, 'test': 2}


@dataclass
class PhantomConfig:
    """합성 팬텀 설정"""

    side: int = 64
    ellipse_count: tuple[int, int] = (3, 8)
    hu_range: tuple[float, float] = (-150.0, 300.0)
    body_hu: float = 40.0
    dose_fraction: float = 0.25
    quantum_noise_hu: float = 25.0
    noise_floor_hu: float = 5.0
    correlation_sigma: float = 0.8
    hu_window: tuple[float, float] = DEFAULT_HU_WINDOW
    seed: int | None = None
    train_size: int = 2048
    val_size: int = 64
    test_size: int = 64

    def __post_init__(self):
        self.ellipse_count = tuple(self.ellipse_count)
        self.hu_range = tuple(self.hu_range)
        self.hu_window = tuple(self.hu_window)
        if self.side < 8:
            raise ValueError(f"팬텀 한 변은 8 이상이어야 합니다: {self.side}")
        if not 0 <= self.ellipse_count[0] <= self.ellipse_count[1]:
            raise ValueError(f"ellipse_count 범위가 잘못되었습니다: {self.ellipse_count}")
        if not self.hu_range[0] < self.hu_range[1]:
            raise ValueError(f"hu_range는 low < high 이어야 합니다: {self.hu_range}")
        check_dose_fraction(self.dose_fraction)
        if self.quantum_noise_hu < 0 or self.noise_floor_hu < 0 or self.correlation_sigma < 0:
            raise ValueError("노이즈 파라미터는 음수일 수 없습니다")


def check_dose_fraction(dose_fraction: float):
    if not 0.0 < dose_fraction <= 1.0:
        raise ValueError(f"dose_fraction은 (0, 1] 범위여야 합니다: {dose_fraction}")


def quantum_noise_std(quantum_noise_hu: float, dose_fraction: float) -> float:
    """선량 dose에서의 양자 노이즈 진폭 σ_q/√dose (HU)"""
    check_dose_fraction(dose_fraction)
    return quantum_noise_hu / math.sqrt(dose_fraction)


def excess_noise_std(cfg: PhantomConfig) -> float:
    """전선량 대비 저선량 영상의 초과 노이즈 표준편차 (HU)"""
    low = quantum_noise_std(cfg.quantum_noise_hu, cfg.dose_fraction)
    full = quantum_noise_std(cfg.quantum_noise_hu, 1.0)
    return math.sqrt(max(low ** 2 - full ** 2, 0.0) + cfg.noise_floor_hu ** 2)


def correlated_noise(shape: tuple[int, int], std: float, correlation_sigma: float,
                     rng: np.random.Generator) -> np.ndarray:
    """
    화소별 표준편차가 std인 공간 상관 가우시안 노이즈

    백색 노이즈를 가우시안 필터(순환 경계)로 상관시키고, 필터 임펄스 응답의
    L2 노름으로 나눠 분산을 되돌린다.
    """
    white = rng.standard_normal(shape)
    if correlation_sigma == 0:
        return white * std

    filtered = ndimage.gaussian_filter(white, correlation_sigma, mode='wrap')
    impulse = np.zeros(shape)
    impulse[0, 0] = 1.0
    gain = np.linalg.norm(ndimage.gaussian_filter(impulse, correlation_sigma, mode='wrap'))
    return filtered / gain * std


def render_phantom(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """몸통 타원 안에 임의의 내부 타원을 겹쳐 그린 HU 영상"""
    n = cfg.side
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    # 화소 중심 좌표를 [-1, 1]로
    u = (xx + 0.5) / n * 2.0 - 1.0
    v = (yy + 0.5) / n * 2.0 - 1.0

    image = np.full((n, n), AIR_HU)
    body_a = rng.uniform(0.75, 0.9)
    body_b = rng.uniform(0.6, 0.8)
    body = (u / body_a) ** 2 + (v / body_b) ** 2 <= 1.0
    image[body] = cfg.body_hu

    count = int(rng.integers(cfg.ellipse_count[0], cfg.ellipse_count[1] + 1))
    for _ in range(count):
        cx = rng.uniform(-0.6, 0.6) * body_a
        cy = rng.uniform(-0.6, 0.6) * body_b
        a = rng.uniform(0.06, 0.3)
        b = rng.uniform(0.06, 0.3)
        theta = rng.uniform(0.0, math.pi)
        hu = rng.uniform(*cfg.hu_range)

        du, dv = u - cx, v - cy
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        ru = du * cos_t + dv * sin_t
        rv = -du * sin_t + dv * cos_t
        inside = ((ru / a) ** 2 + (rv / b) ** 2 <= 1.0) & body
        image[inside] = hu

    return image


def make_phantom_pair(cfg: PhantomConfig, rng: np.random.Generator, source_id: str = 'phantom') -> TrainingPair:
    """
    합성 팬텀 쌍 (x: 전선량, y: 저선량)

    Raises:
        ValueError: dose_fraction이 (0, 1] 밖
    """
    check_dose_fraction(cfg.dose_fraction)
    clean_hu = render_phantom(cfg, rng)

    std = excess_noise_std(cfg)
    if std > 0:
        noisy_hu = clean_hu + correlated_noise(clean_hu.shape, std, cfg.correlation_sigma, rng)
    else:
        noisy_hu = clean_hu

    return TrainingPair(
        clean=normalize_hu(clean_hu, cfg.hu_window),
        condition=normalize_hu(noisy_hu, cfg.hu_window),
        source_id=source_id,
        hu_window=cfg.hu_window,
        provenance={
            'normalization': 'global_window',
            'hu_window': list(cfg.hu_window),
            'dose_fraction': cfg.dose_fraction,
            'excess_noise_hu': std,
        },
    )


class SyntheticPhantomDataset:
    """분할별 합성 팬텀 데이터셋. i번째 쌍은 (seed, split, i)만으로 결정된다."""

    def __init__(self, cfg: PhantomConfig, split: str, seed: int):
        if split not in SPLIT_CODES:
            raise ValueError(f"알 수 없는 split입니다: {split!r}")
        self.cfg = cfg
        self.split = split
        self.seed = cfg.seed if cfg.seed is not None else seed
        self.size = {'train': cfg.train_size, 'val': cfg.val_size, 'test': cfg.test_size}[split]
        self._cache: dict[int, TrainingPair] = {}

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, index: int) -> TrainingPair:
        if not 0 <= index < self.size:
            raise IndexError(f"{self.split} 분할 인덱스 범위 밖: {index}")
        if index not in self._cache:
            rng = np.random.default_rng([self.seed, SPLIT_CODES[self.split], index])
            self._cache[index] = make_phantom_pair(self.cfg, rng, source_id=f"{self.split}-{index:05d}")
        return self._cache[index]
