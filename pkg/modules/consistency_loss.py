# modules/consistency_loss.py
"""가중 Pseudo-Huber 일관성 손실

    L = λ(σ_i, σ_{i+1}) · d( f_θ(x + v·R_{i+1}, σ_{i+1}, y),  sg[f_θ](x + v·R_i, σ_i, y) )
    d(a, b) = √(‖a-b‖₂² + c²) - c,   c = c_scale·√N
    λ(σ_i, σ_{i+1}) = 1 / (σ_{i+1} - σ_i)

교사 분기는 EMA 없이 같은 모듈을 그래디언트 차단(no_grad)으로 평가한다.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from modules.consistency_model import ConsistencyFunction, apply
from utils.perturbation_kernel import PerturbationDraw

logger = logging.getLogger(__name__)

LOSS_REDUCTIONS = ('mean',)


class NonFiniteLossError(RuntimeError):
    """손실이 NaN/Inf 가 된 경우. 문제의 σ 쌍을 담는다."""

    def __init__(self, message: str, sigma_pairs: list[tuple[float, float]]):
        super().__init__(message)
        self.sigma_pairs = sigma_pairs


@dataclass
class LossConfig:
    """c = c_scale·√dims. dims가 None이면 학습 크롭의 화소×채널 수를 쓴다."""

    c_scale: float = 0.00054
    dims: int | None = None
    stop_teacher_grad: bool = True
    reduction: str = 'mean'

    def __post_init__(self):
        if not self.c_scale > 0:
            raise ValueError(f"c_scale은 양수여야 합니다: {self.c_scale}")
        if self.dims is not None and self.dims < 1:
            raise ValueError(f"dims는 1 이상이어야 합니다: {self.dims}")
        if self.reduction not in LOSS_REDUCTIONS:
            raise ValueError(f"지원하지 않는 reduction입니다: {self.reduction!r}")

    def huber_c(self, dims: int | None = None) -> float:
        n = self.dims if self.dims is not None else dims
        if n is None or n < 1:
            raise ValueError("Pseudo-Huber c를 정하려면 데이터 차원 N이 필요합니다")
        return self.c_scale * math.sqrt(n)


def _check_shapes(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ValueError(f"영상 모양이 다릅니다: {tuple(a.shape)} vs {tuple(b.shape)}")


def pseudo_huber(a: torch.Tensor, b: torch.Tensor, c: float) -> torch.Tensor:
    """
    √(‖a-b‖₂² + c²) - c  (a, b 전체를 한 인스턴스로 펼쳐서)

    d²/(√(d²+c²)+c) 형태로 계산해 작은 거리에서 상쇄 오차가 없다.
    """
    _check_shapes(a, b)
    if not c > 0:
        raise ValueError(f"c는 양수여야 합니다: {c}")
    squared = torch.sum((a - b) ** 2)
    return squared / (torch.sqrt(squared + c ** 2) + c)


def pseudo_huber_per_sample(a: torch.Tensor, b: torch.Tensor, c: float) -> torch.Tensor:
    """배치 (B, ...) 에 대한 샘플별 Pseudo-Huber 거리 (B,)"""
    _check_shapes(a, b)
    if not c > 0:
        raise ValueError(f"c는 양수여야 합니다: {c}")
    squared = torch.sum((a - b).reshape(a.shape[0], -1) ** 2, dim=1)
    return squared / (torch.sqrt(squared + c ** 2) + c)


def weight(sigma_lo, sigma_hi):
    """
    λ = 1/(σ_hi - σ_lo). 스칼라 또는 배열 모두 받는다.

    Raises:
        ValueError: σ_hi <= σ_lo
    """
    lo = np.asarray(sigma_lo, dtype=np.float64)
    hi = np.asarray(sigma_hi, dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError(f"sigma_hi > sigma_lo 이어야 합니다: lo={sigma_lo!r}, hi={sigma_hi!r}")
    result = 1.0 / (hi - lo)
    return float(result) if result.ndim == 0 else result


def assert_teacher_matches(student: ConsistencyFunction, teacher: ConsistencyFunction):
    """교사 파라미터가 학생과 비트 단위로 같은지 확인 (EMA 없음)"""
    student_state = student.state_dict()
    for name, value in teacher.state_dict().items():
        if not torch.equal(student_state[name], value):
            raise AssertionError(f"교사 파라미터가 학생과 다릅니다: {name}")


def consistency_loss(
    f: ConsistencyFunction,
    draw: PerturbationDraw,
    x: torch.Tensor,
    y: torch.Tensor,
    cfg: LossConfig,
    teacher: ConsistencyFunction | None = None,
) -> torch.Tensor:
    """
    배치 평균 일관성 손실 (θ에 대한 그래디언트 포함 스칼라)

    Args:
        f: 학생 일관성 함수
        draw: draw_pair_batch 결과 (배치 행마다 σ 쌍과 공유 각도)
        x: (B, C, H, W) 깨끗한 영상
        y: (B, C, H, W) 조건 영상
        cfg: 손실 설정
        teacher: 별도 교사 모듈 (검사용). None이면 f 자신을 교사로 쓴다.

    Raises:
        NonFiniteLossError: 손실이 유한하지 않을 때 (문제 σ 쌍 포함)
    """
    _check_shapes(x, y)
    batch = x.shape[0]
    dims = int(np.prod(x.shape[1:]))
    angle = np.atleast_2d(draw.angle)
    if angle.shape != (batch, dims):
        raise ValueError(f"섭동 각도 모양이 배치와 맞지 않습니다: {angle.shape} vs {(batch, dims)}")

    if teacher is None:
        teacher = f
    else:
        assert_teacher_matches(f, teacher)

    to_tensor = lambda a: torch.as_tensor(np.asarray(a), dtype=x.dtype, device=x.device)  # noqa: E731
    v = to_tensor(angle).reshape(x.shape)
    r_lo = to_tensor(np.atleast_1d(draw.radius_lo))[:, None, None, None]
    r_hi = to_tensor(np.atleast_1d(draw.radius_hi))[:, None, None, None]
    sigma_lo = np.atleast_1d(draw.sigma_lo)
    sigma_hi = np.atleast_1d(draw.sigma_hi)

    student = apply(f, x + v * r_hi, to_tensor(sigma_hi), y)
    if cfg.stop_teacher_grad:
        with torch.no_grad():
            target = apply(teacher, x + v * r_lo, to_tensor(sigma_lo), y)
    else:
        target = apply(teacher, x + v * r_lo, to_tensor(sigma_lo), y)

    distances = pseudo_huber_per_sample(student, target, cfg.huber_c(dims))
    weights = to_tensor(np.atleast_1d(weight(sigma_lo, sigma_hi)))
    per_sample = weights * distances

    finite = torch.isfinite(per_sample)
    if not bool(finite.all()):
        bad = (~finite).nonzero().flatten().tolist()
        pairs = [(float(sigma_lo[i]), float(sigma_hi[i])) for i in bad]
        raise NonFiniteLossError(f"유한하지 않은 손실: σ 쌍 {pairs[:5]}", pairs)

    return per_sample.mean()
