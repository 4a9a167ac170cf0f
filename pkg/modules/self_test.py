# modules/self_test.py
"""설치 확인용 자기 검사 모음

- 커널: 반지름 표본 vs 구적 CDF의 KS 통계량, D=2048 가우시안 극한
- 스케줄: 기준값과 단조성
- 손실: 항등식, 유한 차분 그래디언트, 교사 경로 그래디언트 차단
- 모델: 경계 조건 (학습 전, 임의 θ)
각 검사는 예외를 실패로 바꿔 기록하고 다음 검사로 넘어간다.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy import stats

from modules.consistency_loss import LossConfig, consistency_loss, pseudo_huber, pseudo_huber_per_sample, weight
from modules.consistency_model import ConsistencyFunction, NetworkConfig, apply
from utils.noise_selector import NoiseSelectConfig, sample_beta_indices
from utils.perturbation_kernel import (
    AugmentedKernelSpec, draw_pair_batch, radial_cdf_table, sample_radius, sample_uniform_angles,
)
from utils.schedule_calculator import ScheduleCalculator, ScheduleConfig

logger = logging.getLogger(__name__)

KS_CASES = [(1, 2), (4, 6), (16, 128), (64, 2048)]
KS_LIMIT = 0.01
GAUSSIAN_STD_TOLERANCE = 0.02
GAUSSIAN_KS_LIMIT = 0.02
SINUSOIDAL_GOLDEN = {0: 11, 100: 58, 300: 101}
EXPONENTIAL_GOLDEN = {0: 11, 100: 21, 800: 1281}
BOUNDARY_TOLERANCE = 1e-5
GRADIENT_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def small_consistency_function(seed: int, dtype=torch.float32, depth: int = 2) -> ConsistencyFunction:
    """검사용 작은 일관성 함수 (base 8채널)"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        f = ConsistencyFunction(NetworkConfig(base_channels=8, depth=depth, noise_embedding_dim=16))
    return f.to(dtype)


def check_kernel_cdf(draws: int = 100_000, seed: int = 0) -> list[CheckResult]:
    results = []
    for data_dim, aug_dim in KS_CASES:
        rng = np.random.default_rng([seed, data_dim, aug_dim])
        spec = AugmentedKernelSpec(data_dim, aug_dim, 1.0 / math.sqrt(aug_dim))  # r = 1
        samples = sample_radius(spec, draws, rng)
        grid, cdf = radial_cdf_table(data_dim, aug_dim, r=1.0)
        statistic = stats.kstest(samples, lambda v: np.interp(v, grid, cdf)).statistic
        results.append(CheckResult(
            f"kernel_cdf(N={data_dim}, D={aug_dim})", statistic < KS_LIMIT, f"KS={statistic:.5f} (< {KS_LIMIT})"
        ))
    return results


def check_gaussian_limit(draws: int = 100_000, seed: int = 0, sigma: float = 0.5,
                         data_dim: int = 64, aug_dim: int = 2048) -> list[CheckResult]:
    rng = np.random.default_rng([seed, 2048])
    angles = sample_uniform_angles(data_dim, draws, rng)
    radii = sample_radius(AugmentedKernelSpec(data_dim, aug_dim, sigma), draws, rng)
    offsets = angles * radii[:, None]

    std = float(offsets.std())
    relative = abs(std - sigma) / sigma
    statistic = stats.kstest(offsets[:, 0], stats.norm(scale=sigma).cdf).statistic
    return [
        CheckResult("gaussian_limit_std", relative < GAUSSIAN_STD_TOLERANCE,
                    f"std={std:.5f}, σ={sigma}, 상대 오차 {relative:.4%}"),
        CheckResult("gaussian_limit_ks", statistic < GAUSSIAN_KS_LIMIT, f"KS={statistic:.5f} (< {GAUSSIAN_KS_LIMIT})"),
    ]


def check_schedule_golden() -> list[CheckResult]:
    sinusoidal = ScheduleConfig(10, 100, 300, 'sinusoidal')
    got = {k: ScheduleCalculator.sinusoidal_steps(sinusoidal, k) for k in SINUSOIDAL_GOLDEN}
    sweep = [ScheduleCalculator.sinusoidal_steps(sinusoidal, k) for k in range(sinusoidal.K + 1)]
    monotone = all(a <= b for a, b in zip(sweep, sweep[1:]))

    exponential = ScheduleConfig(10, 1280, 800, 'exponential')
    got_exp = {k: ScheduleCalculator.exponential_steps(exponential, k) for k in EXPONENTIAL_GOLDEN}
    return [
        CheckResult("schedule_sinusoidal_golden", got == SINUSOIDAL_GOLDEN, f"{got}"),
        CheckResult("schedule_sinusoidal_monotone", monotone, f"k=0..{sinusoidal.K}"),
        CheckResult("schedule_exponential_golden", got_exp == EXPONENTIAL_GOLDEN, f"{got_exp}"),
    ]


def check_beta_mapping(batches: int = 10_000, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng([seed, 6])
    cfg = NoiseSelectConfig()
    top = 10
    ok = True
    for _ in range(batches):
        indices = sample_beta_indices(16, top + 1, cfg, rng)
        if indices.min() != 0 or indices.max() != top:
            ok = False
            break
    return [CheckResult("beta_index_mapping", ok, f"{batches}개 배치, 범위 [0, {top}]")]


def _fixed_draw(x: torch.Tensor, sigma_lo: float, sigma_hi: float, seed: int):
    rng = np.random.default_rng([seed, 4])
    batch = x.shape[0]
    dims = int(np.prod(x.shape[1:]))
    return draw_pair_batch(dims, [sigma_lo] * batch, [sigma_hi] * batch, 2048, rng)


def finite_difference_gradient_error(seed: int = 0, step: float = 1e-6) -> float:
    """
    교사 분기도 미분하는 변형(stop_teacher_grad=False)에서 두 탐침 파라미터의
    autograd 그래디언트와 중앙 유한 차분의 최대 상대 오차 (8×8, σ=1.0, float64)
    """
    f = small_consistency_function(seed, torch.float64, depth=2)
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand((1, 1, 8, 8), generator=gen, dtype=torch.float64) * 2 - 1
    y = x + 0.1 * torch.randn((1, 1, 8, 8), generator=gen, dtype=torch.float64)
    draw = _fixed_draw(x, 1.0, 1.5, seed)
    cfg = LossConfig(stop_teacher_grad=False)

    probes = [(f.network.head[-1].weight, (0, 0, 1, 1)), (f.network.stem.weight, (0, 1, 1, 1))]
    loss = consistency_loss(f, draw, x, y, cfg)
    grads = torch.autograd.grad(loss, [p for p, _ in probes])

    worst = 0.0
    with torch.no_grad():
        for (param, index), grad in zip(probes, grads):
            original = param[index].item()
            param[index] = original + step
            plus = consistency_loss(f, draw, x, y, cfg).item()
            param[index] = original - step
            minus = consistency_loss(f, draw, x, y, cfg).item()
            param[index] = original
            numeric = (plus - minus) / (2 * step)
            analytic = grad[index].item()
            worst = max(worst, abs(analytic - numeric) / max(abs(numeric), 1e-12))
    return worst


def teacher_path_gradient_gap(seed: int = 0) -> float:
    """
    그래디언트 차단 확인: 일관성 손실의 그래디언트와, 교사 출력을 미리 상수로 계산해
    넣은 손실의 그래디언트 사이 최대 차이 (0이면 교사 경로 기여 없음)
    """
    f = small_consistency_function(seed, torch.float64, depth=2)
    gen = torch.Generator().manual_seed(seed + 1)
    x = torch.rand((2, 1, 8, 8), generator=gen, dtype=torch.float64) * 2 - 1
    y = x + 0.1 * torch.randn((2, 1, 8, 8), generator=gen, dtype=torch.float64)
    draw = _fixed_draw(x, 0.5, 0.8, seed)
    cfg = LossConfig()
    params = list(f.parameters())

    grads = torch.autograd.grad(consistency_loss(f, draw, x, y, cfg), params, allow_unused=True)

    v = torch.as_tensor(draw.angle).reshape(x.shape)
    r_lo = torch.as_tensor(draw.radius_lo)[:, None, None, None]
    r_hi = torch.as_tensor(draw.radius_hi)[:, None, None, None]
    target = apply(f, x + v * r_lo, torch.as_tensor(draw.sigma_lo), y).detach()
    student = apply(f, x + v * r_hi, torch.as_tensor(draw.sigma_hi), y)
    lam = torch.as_tensor(weight(draw.sigma_lo, draw.sigma_hi))
    manual = (lam * pseudo_huber_per_sample(student, target, cfg.huber_c(64))).mean()
    reference = torch.autograd.grad(manual, params, allow_unused=True)

    gap = 0.0
    for a, b in zip(grads, reference):
        if a is None or b is None:
            continue
        gap = max(gap, float((a - b).abs().max()))
    return gap


def check_loss_identities(seed: int = 0) -> list[CheckResult]:
    a = torch.randn(1, 1, 8, 8, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    same = float(pseudo_huber(a, a, 0.5))
    b = torch.zeros(3, dtype=torch.float64)
    unit = float(pseudo_huber(torch.ones(3, dtype=torch.float64), b, 1.0))
    fd_error = finite_difference_gradient_error(seed)
    gap = teacher_path_gradient_gap(seed)
    return [
        CheckResult("pseudo_huber_identity", same == 0.0, f"d(a,a)={same}"),
        CheckResult("pseudo_huber_unit_case", abs(unit - 1.0) < 1e-12, f"‖a-b‖²=3, c=1 → {unit}"),
        CheckResult("loss_finite_difference", fd_error < GRADIENT_TOLERANCE, f"최대 상대 오차 {fd_error:.2e}"),
        CheckResult("loss_teacher_stopgrad", gap < 1e-12, f"교사 경로 그래디언트 차이 {gap:.2e}"),
    ]


def check_boundary(trials: int = 100, seed: int = 0) -> list[CheckResult]:
    worst = 0.0
    for trial in range(trials):
        f = small_consistency_function(seed + trial)
        gen = torch.Generator().manual_seed(seed + trial)
        x = torch.randn(2, 1, 16, 16, generator=gen)
        y = torch.randn(2, 1, 16, 16, generator=gen)
        with torch.no_grad():
            out = apply(f, x, f.sigma_min, y)
        worst = max(worst, float((out - x).abs().max()))
    return [CheckResult("boundary_condition", worst < BOUNDARY_TOLERANCE,
                        f"max|f(x, σ_min, y) - x| = {worst:.2e} ({trials}회)")]


def run_self_tests(seed: int = 0, draws: int = 100_000) -> list[CheckResult]:
    """모든 검사를 실행하고 결과 목록을 반환한다"""
    suites = [
        ('커널 CDF', lambda: check_kernel_cdf(draws, seed)),
        ('가우시안 극한', lambda: check_gaussian_limit(draws, seed)),
        ('스케줄 기준값', check_schedule_golden),
        ('Beta 인덱스', lambda: check_beta_mapping(seed=seed)),
        ('손실 항등식', lambda: check_loss_identities(seed)),
        ('경계 조건', lambda: check_boundary(seed=seed)),
    ]
    results = []
    for label, suite in suites:
        try:
            results.extend(suite())
        except Exception as e:
            logger.error(f"{label} 검사 중 오류 발생: {str(e)}", exc_info=True)
            results.append(CheckResult(label, False, f"오류: {e}"))
    return results
