# modules/evaluator.py
"""분할 평가와 결과 보고서

이미지마다 denoise를 한 번(NFE=1) 실행하고 전선량 영상 대비 SSIM/PSNR을 계산한다.
같은 이미지의 저선량 입력(y vs x)을 LDCT 기준선으로 함께 기록한다.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from modules.consistency_model import ConsistencyFunction, check_parameters, denoise
from utils.metric_calculator import MetricCalculator
from utils.paired_dataset import crop

logger = logging.getLogger(__name__)

# 평가 노이즈 스트림 식별자 (학습 스트림과 분리)
EVAL_STREAM = 2
TABLE_COLUMNS = ['Type', 'LPIPS', 'SSIM', 'PSNR', 'NFE']


@dataclass
class ImageMetrics:
    image_id: str
    ssim: float
    psnr: float
    baseline_ssim: float
    baseline_psnr: float
    nfe: int


@dataclass
class EvalReport:
    """이미지별 지표와 집계. psnr이 inf인 이미지는 집계에서 빼고 개수를 센다."""

    split: str
    sigma_star: float
    seed: int
    rows: list[ImageMetrics] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        columns = ['image_id', 'ssim', 'psnr', 'baseline_ssim', 'baseline_psnr', 'nfe']
        return pd.DataFrame([vars(r) for r in self.rows], columns=columns)

    @staticmethod
    def _aggregate(values: pd.Series) -> dict:
        finite = values[np.isfinite(values.to_numpy(dtype=np.float64))]
        return {
            'mean': float(finite.mean()) if len(finite) else math.nan,
            'std': float(finite.std(ddof=0)) if len(finite) else math.nan,
            'count': int(len(finite)),
            'inf_count': int(len(values) - len(finite)),
        }

    def summary(self) -> dict:
        """열별 평균 ± 표준편차 (모집단 표준편차)"""
        df = self.to_frame()
        result = {name: self._aggregate(df[name]) for name in ('ssim', 'psnr', 'baseline_ssim', 'baseline_psnr')}
        result['nfe'] = sorted(set(df['nfe'].tolist()))
        result['failures'] = len(self.failures)
        return result

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as fh:
            fh.write(f"# seed={self.seed} split={self.split} sigma_star={self.sigma_star}\n")
            self.to_frame().to_csv(fh, index=False)
        return path

    def table_frame(self) -> pd.DataFrame:
        """LDCT 기준선 행과 PFCT 행 (LPIPS 열은 외부 값 병합용으로 비워 둔다)"""
        s = self.summary()

        def fmt(agg, digits):
            if agg['count'] == 0:
                return 'n/a'
            text = f"{agg['mean']:.{digits}f} ± {agg['std']:.{digits}f}"
            return text + (f" (inf {agg['inf_count']})" if agg['inf_count'] else '')

        nfe = ','.join(str(n) for n in s['nfe']) or '-'
        return pd.DataFrame(
            [
                ['LDCT', '', fmt(s['baseline_ssim'], 4), fmt(s['baseline_psnr'], 2), '-'],
                ['PFCT', '', fmt(s['ssim'], 4), fmt(s['psnr'], 2), nfe],
            ],
            columns=TABLE_COLUMNS,
        )

    def to_table(self) -> str:
        lines = [f"[{self.split}] σ*={self.sigma_star:g}, 이미지 {len(self.rows)}장, 실패 {len(self.failures)}장"]
        lines.append(self.table_frame().to_string(index=False))
        for image_id, message in self.failures:
            lines.append(f"  실패: {image_id} - {message}")
        return '\n'.join(lines)


def evaluate_split(
    f: ConsistencyFunction,
    dataset,
    split: str,
    sigma_star: float,
    seed: int,
    crop_mode: str = 'full',
    crop_size: int = 128,
    aug_dim: int = 2048,
    limit: int | None = None,
    dynamic_range: float = 2.0,
    peak: float = 2.0,
    device: torch.device | str = 'cpu',
) -> EvalReport:
    """
    선언된 분할 하나를 평가한다.

    이미지 i의 섭동 노이즈는 (seed, EVAL_STREAM, i)에서 나오므로 같은 모델·분할·σ*면
    결과가 결정적이다. 이미지별 실패는 기록만 하고 다음 이미지로 넘어간다.

    Raises:
        ValueError: 유한하지 않은 모델 파라미터
    """
    check_parameters(f)
    report = EvalReport(split=split, sigma_star=float(sigma_star), seed=int(seed))
    count = len(dataset) if limit is None else min(limit, len(dataset))

    was_training = f.training
    f.eval()
    try:
        for index in range(count):
            image_id = f"{split}-{index}"
            try:
                pair = crop(dataset[index], crop_mode, size=crop_size)
                image_id = pair.source_id
                y = torch.as_tensor(pair.condition, dtype=torch.float32, device=device)[None, None]

                before = f.nfe
                rng = np.random.default_rng([seed, EVAL_STREAM, index])
                output = denoise(f, y, sigma_star, rng, aug_dim=aug_dim)
                nfe = f.nfe - before
                if nfe != 1:
                    raise RuntimeError(f"NFE가 1이 아닙니다: {nfe}")

                restored = output[0, 0].detach().cpu().numpy().astype(np.float64)
                report.rows.append(ImageMetrics(
                    image_id=image_id,
                    ssim=MetricCalculator.ssim(restored, pair.clean, dynamic_range),
                    psnr=MetricCalculator.psnr(restored, pair.clean, peak),
                    baseline_ssim=MetricCalculator.ssim(pair.condition, pair.clean, dynamic_range),
                    baseline_psnr=MetricCalculator.psnr(pair.condition, pair.clean, peak),
                    nfe=nfe,
                ))
            except (ValueError, RuntimeError, OSError) as e:
                logger.warning(f"이미지 평가 실패 ({image_id}): {e}")
                report.failures.append((image_id, str(e)))
    finally:
        f.train(was_training)

    logger.info(f"{split} 평가 완료: 성공 {len(report.rows)}장, 실패 {len(report.failures)}장")
    return report
