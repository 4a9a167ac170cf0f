# modules/run_log.py
"""학습 기록 (append-only)

- 단계 기록: step, M, sigma_mean, loss   → run_log.csv
- 평가 기록: step, ssim, psnr            → eval_log.csv
두 CSV 모두 첫 줄에 '# seed=<seed>' 주석을 남긴다.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)

STEP_COLUMNS = ['step', 'M', 'sigma_mean', 'loss']
EVAL_COLUMNS = ['step', 'ssim', 'psnr']
LOSS_WINDOW = 50


@dataclass
class StepRecord:
    step: int
    M: int
    sigma_mean: float
    loss: float


@dataclass
class EvalRecord:
    step: int
    ssim: float
    psnr: float


@dataclass
class RunLog:
    """단계 기록과 평가 기록. 각각 step이 엄격히 증가해야 한다."""

    steps: list[StepRecord] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)

    def append_step(self, record: StepRecord):
        if self.steps and record.step <= self.steps[-1].step:
            raise ValueError(f"단계 기록은 증가해야 합니다: {self.steps[-1].step} → {record.step}")
        self.steps.append(record)

    def append_eval(self, record: EvalRecord):
        if self.evals and record.step <= self.evals[-1].step:
            raise ValueError(f"평가 기록은 증가해야 합니다: {self.evals[-1].step} → {record.step}")
        self.evals.append(record)

    def step_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.steps], columns=STEP_COLUMNS)

    def eval_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.evals], columns=EVAL_COLUMNS)

    def loss_moving_average(self, window: int = LOSS_WINDOW) -> pd.Series:
        """step 인덱스의 손실 이동 평균 (건너뛴 단계의 NaN은 무시)"""
        frame = self.step_frame().set_index('step')
        return frame['loss'].rolling(window, min_periods=1).mean()

    def to_dict(self) -> dict:
        return {'steps': [asdict(r) for r in self.steps], 'evals': [asdict(r) for r in self.evals]}

    @classmethod
    def from_dict(cls, data: dict) -> 'RunLog':
        log = cls()
        for item in data.get('steps', []):
            log.append_step(StepRecord(**item))
        for item in data.get('evals', []):
            log.append_eval(EvalRecord(**item))
        return log

    def write_csv(self, directory, seed: int) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, frame in (('run_log.csv', self.step_frame()), ('eval_log.csv', self.eval_frame())):
            path = directory / name
            with open(path, 'w', encoding='utf-8', newline='') as fh:
                fh.write(f"# seed={seed}\n")
                frame.to_csv(fh, index=False)
            paths.append(path)
        logger.info(f"학습 기록 저장: {paths[0]} ({len(self.steps)}행), {paths[1]} ({len(self.evals)}행)")
        return paths[0], paths[1]

    @classmethod
    def read_csv(cls, directory) -> 'RunLog':
        directory = Path(directory)
        steps = pd.read_csv(directory / 'run_log.csv', comment='#')
        evals = pd.read_csv(directory / 'eval_log.csv', comment='#')
        return cls(
            steps=[StepRecord(int(r.step), int(r.M), float(r.sigma_mean), float(r.loss)) for r in steps.itertuples()],
            evals=[EvalRecord(int(r.step), float(r.ssim), float(r.psnr)) for r in evals.itertuples()],
        )
