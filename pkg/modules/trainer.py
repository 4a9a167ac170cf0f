# modules/trainer.py
"""일관성 학습 루프

단계 k마다: M(k) 스케줄 → σ 격자 → 배치 원소별 인덱스 → 같은 각도를 공유하는
인접 섭동 쌍 → 일관성 손실 → RAdam 한 번 갱신. EMA 상태는 어디에도 없다.

재현성:
- 모델 초기값은 seed로 고정 (전역 torch 난수 상태는 건드리지 않는다)
- 단계 k의 데이터 배치는 (seed, DATA_STREAM, k) 에서만 결정된다
- σ 인덱스·각도·반지름은 하나의 노이즈 스트림 (seed, NOISE_STREAM) 에서 순서대로 뽑고,
  그 상태를 체크포인트에 저장한다
"""

import dataclasses
import json
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

from configs.run_setting import RunConfig
from modules.checkpoint_store import (
    Checkpoint, CheckpointError, checkpoint_name, latest_checkpoint, load_checkpoint, save_checkpoint,
)
from modules.cleanup import CheckpointCleaner
from modules.consistency_loss import NonFiniteLossError, consistency_loss
from modules.consistency_model import ConsistencyFunction
from modules.evaluator import evaluate_split
from modules.run_log import EvalRecord, RunLog, StepRecord
from utils.noise_selector import select_indices
from utils.paired_dataset import DatasetError, crop, load_paired_dataset
from utils.perturbation_kernel import draw_pair_batch
from utils.phantom_generator import SPLIT_CODES, SyntheticPhantomDataset
from utils.run_log_visualizer import RunLogVisualizer
from utils.schedule_calculator import ScheduleCalculator

logger = logging.getLogger(__name__)

NOISE_STREAM = 0
DATA_STREAM = 1


@dataclass
class StepResult:
    step: int
    M: int
    sigma_mean: float
    loss: float
    skipped: bool = False


def build_datasets(cfg: RunConfig) -> dict:
    """설정의 데이터 출처로 분할별 데이터셋을 만든다"""
    if cfg.data.source == 'synthetic':
        return {split: SyntheticPhantomDataset(cfg.phantom, split, cfg.seed) for split in SPLIT_CODES}
    root = Path(cfg.data.root) if cfg.data.root else Path(cfg.data.manifest).parent
    return load_paired_dataset(root, cfg.data.manifest)


def make_batch(dataset, cfg: RunConfig, step: int) -> tuple[np.ndarray, np.ndarray]:
    """
    단계 step의 학습 배치 (x, y), 각각 (B, 1, H, W) float32

    같은 (seed, step)이면 어느 스레드·어느 재개 시점에서도 같은 배치가 나온다.
    """
    if len(dataset) == 0:
        raise DatasetError("학습 분할이 비어 있습니다")
    rng = np.random.default_rng([cfg.seed, DATA_STREAM, step])
    indices = rng.integers(0, len(dataset), size=cfg.batch_size)
    pairs = [crop(dataset[int(i)], cfg.data.train_crop, rng, size=cfg.data.crop_size) for i in indices]
    clean = np.stack([p.clean for p in pairs])[:, None].astype(np.float32)
    condition = np.stack([p.condition for p in pairs])[:, None].astype(np.float32)
    return clean, condition


class PrefetchThread(threading.Thread):
    """학습 루프보다 앞서 배치를 만들어 크기 제한 큐에 채우는 스레드"""

    def __init__(self, dataset, cfg: RunConfig, start_step: int, stop_step: int):
        super().__init__(daemon=True)
        self.dataset = dataset
        self.cfg = cfg
        self.start_step = start_step
        self.stop_step = stop_step
        self.batches = queue.Queue(maxsize=cfg.prefetch)
        self.is_running = False

    def run(self):
        self.is_running = True
        try:
            for k in range(self.start_step, self.stop_step):
                item = (k, *make_batch(self.dataset, self.cfg, k))
                if not self._put(item):
                    return
        except Exception as e:
            logger.error(f"배치 준비 중 오류 발생: {str(e)}", exc_info=True)
            self._put(e)

    def _put(self, item) -> bool:
        while self.is_running:
            try:
                self.batches.put(item, timeout=0.5)
                return True
            except queue.Full:
                continue
        return False

    def next_batch(self) -> tuple[int, np.ndarray, np.ndarray]:
        item = self.batches.get()
        if isinstance(item, Exception):
            raise item
        return item

    def stop(self):
        self.is_running = False


class PFCTTrainer:
    """모델·옵티마이저·노이즈 스트림·학습 기록을 함께 들고 있는 학습 상태"""

    def __init__(self, cfg: RunConfig, device: torch.device | str = 'cpu'):
        if cfg.seed is None:
            raise ValueError("학습에는 seed가 필요합니다")
        self.cfg = cfg
        self.device = torch.device(device)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.model = ConsistencyFunction(cfg.network, cfg.sigma_min, cfg.sigma_data).to(self.device)
        self.optimizer = torch.optim.RAdam(self.model.parameters(), lr=cfg.learning_rate)
        self.rng = np.random.default_rng([cfg.seed, NOISE_STREAM])
        self.step = 0
        self.run_log = RunLog()

    def train_step(self, x: np.ndarray, y: np.ndarray, k: int) -> StepResult:
        """
        단계 k의 학습 한 번

        손실이나 그래디언트 노름이 유한하지 않으면 갱신 없이 건너뛰고
        (파라미터는 이전 값 그대로) σ 쌍과 seed를 로그로 남긴다.
        """
        cfg = self.cfg
        if not 0 <= k < cfg.K:
            raise ValueError(f"단계 k는 [0, {cfg.K}) 범위여야 합니다: {k}")

        M = ScheduleCalculator.discretization_steps(cfg.schedule, k)
        grid = ScheduleCalculator.sigma_grid(M, cfg.sigma_min, cfg.sigma_max, cfg.rho)
        indices = select_indices(x.shape[0], grid, cfg.noise_select, self.rng)
        sigma_lo = grid.sigmas[indices]
        sigma_hi = grid.sigmas[indices + 1]
        draw = draw_pair_batch(int(np.prod(x.shape[1:])), sigma_lo, sigma_hi, cfg.D, self.rng,
                               coupled=cfg.coupled_radii)

        x_t = torch.as_tensor(x, dtype=torch.float32, device=self.device)
        y_t = torch.as_tensor(y, dtype=torch.float32, device=self.device)

        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        try:
            loss = consistency_loss(self.model, draw, x_t, y_t, cfg.loss)
            loss.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
            if not torch.isfinite(grad_norm):
                pairs = list(zip(sigma_lo.tolist(), sigma_hi.tolist()))
                raise NonFiniteLossError(f"유한하지 않은 그래디언트 노름: {grad_norm.item()}", pairs)
        except NonFiniteLossError as e:
            self.optimizer.zero_grad(set_to_none=True)
            logger.warning(f"단계 {k} 건너뜀 (seed={cfg.seed}): {e} / σ 쌍 {e.sigma_pairs[:3]}")
            self.step = k + 1
            return StepResult(k, M, float(sigma_lo.mean()), math.nan, skipped=True)

        self.optimizer.step()
        self.step = k + 1
        return StepResult(k, M, float(sigma_lo.mean()), float(loss.item()))

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            step=self.step,
            seed=self.cfg.seed,
            run_config=self.cfg.to_dict(),
            network_config=dataclasses.asdict(self.cfg.network),
            rng_state=self.rng.bit_generator.state,
            run_log=self.run_log.to_dict(),
            model_state=self.model.state_dict(),
            optimizer_state=self.optimizer.state_dict(),
        )

    def restore(self, checkpoint: Checkpoint):
        """체크포인트의 단계·파라미터·옵티마이저·노이즈 스트림·기록을 복원한다"""
        if checkpoint.seed != self.cfg.seed:
            raise CheckpointError(f"체크포인트 seed({checkpoint.seed})가 설정 seed({self.cfg.seed})와 다릅니다")
        self.model.load_state_dict(checkpoint.model_state)
        if checkpoint.optimizer_state is not None:
            self.optimizer.load_state_dict(checkpoint.optimizer_state)
        self.rng.bit_generator.state = checkpoint.rng_state
        self.step = checkpoint.step
        self.run_log = RunLog.from_dict(checkpoint.run_log)

    def save(self, directory) -> Path:
        return save_checkpoint(Path(directory) / checkpoint_name(self.step), self.to_checkpoint())


def _check_train_shape(dataset, cfg: RunConfig):
    sample = crop(dataset[0], cfg.data.train_crop, np.random.default_rng(0), size=cfg.data.crop_size)
    for side in sample.clean.shape:
        cfg.network.check_side(side)


def _validation_record(trainer: PFCTTrainer, val_set, step: int) -> EvalRecord | None:
    cfg = trainer.cfg
    if val_set is None or len(val_set) == 0:
        logger.warning("검증 분할이 비어 있어 평가를 건너뜁니다")
        return None
    report = evaluate_split(
        trainer.model, val_set, 'val', cfg.inference_sigma, cfg.seed,
        crop_mode=cfg.data.val_crop, crop_size=cfg.data.crop_size, aug_dim=cfg.D,
        limit=cfg.data.val_limit, device=trainer.device,
    )
    summary = report.summary()
    record = EvalRecord(step, summary['ssim']['mean'], summary['psnr']['mean'])
    logger.info(
        f"검증 (step={step}): SSIM {record.ssim:.4f} (입력 {summary['baseline_ssim']['mean']:.4f}), "
        f"PSNR {record.psnr:.2f} dB (입력 {summary['baseline_psnr']['mean']:.2f} dB)"
    )
    return record


def train_run(cfg: RunConfig, out_dir=None, resume: bool = False, device: torch.device | str = 'cpu',
              datasets: dict | None = None, progress: bool = True) -> tuple[Path, RunLog]:
    """
    K 단계 학습을 실행한다.

    checkpoint_interval마다 체크포인트, eval_interval마다 검증 SSIM/PSNR을 기록하고,
    끝나면 run_log.csv / eval_log.csv / 로그 스케일 곡선 PNG / run_summary.json을 남긴다.

    Args:
        cfg: seed가 정해진 실행 설정
        out_dir: 출력 디렉토리 (None이면 cfg.output_dir)
        resume: True면 out_dir/checkpoints의 최신 체크포인트에서 이어서 학습
        device: 연산 장치
        datasets: 분할별 데이터셋 (None이면 설정으로 생성)
        progress: tqdm 진행률 표시

    Returns:
        (최종 체크포인트 경로, RunLog)
    """
    started = time.time()
    out_dir = Path(out_dir or cfg.output_dir)
    ckpt_dir = out_dir / 'checkpoints'
    datasets = datasets or build_datasets(cfg)
    train_set = datasets['train']
    if cfg.K > 0:
        if len(train_set) == 0:
            raise DatasetError("학습 분할이 비어 있습니다")
        _check_train_shape(train_set, cfg)

    trainer = PFCTTrainer(cfg, device)
    latest = latest_checkpoint(ckpt_dir) if resume else None
    if latest is not None:
        trainer.restore(load_checkpoint(latest, map_location=trainer.device))
        logger.info(f"체크포인트에서 재개: {latest} (step={trainer.step})")
    else:
        if resume:
            logger.warning(f"재개할 체크포인트가 없어 처음부터 학습합니다: {ckpt_dir}")
        trainer.save(ckpt_dir)

    cleaner = CheckpointCleaner(ckpt_dir, keep=cfg.keep_checkpoints)
    final_path = latest_checkpoint(ckpt_dir)
    if trainer.step < cfg.K:
        prefetch = PrefetchThread(train_set, cfg, trainer.step, cfg.K)
        prefetch.start()
        try:
            bar = tqdm(total=cfg.K, initial=trainer.step, desc='학습', disable=not progress)
            while trainer.step < cfg.K:
                k, x, y = prefetch.next_batch()
                result = trainer.train_step(x, y, k)
                trainer.run_log.append_step(StepRecord(result.step, result.M, result.sigma_mean, result.loss))
                bar.update(1)
                bar.set_postfix(M=result.M, loss=f"{result.loss:.4g}")

                done = trainer.step
                if done % cfg.eval_interval == 0 or done == cfg.K:
                    record = _validation_record(trainer, datasets.get('val'), done)
                    if record is not None:
                        trainer.run_log.append_eval(record)
                if done % cfg.checkpoint_interval == 0 or done == cfg.K:
                    final_path = trainer.save(ckpt_dir)
                    cleaner.remove_old_checkpoints(protect=[final_path])
            bar.close()
        finally:
            prefetch.stop()
            prefetch.join(timeout=5)

    trainer.run_log.write_csv(out_dir, cfg.seed)
    RunLogVisualizer(out_dir).create_visualization(trainer.run_log, cfg.seed)

    summary = {
        'seed': cfg.seed,
        'final_step': trainer.step,
        'sigma_star': cfg.inference_sigma,
        'checkpoint': str(final_path),
        'skipped_steps': int(sum(1 for r in trainer.run_log.steps if math.isnan(r.loss))),
        'elapsed_seconds': round(time.time() - started, 3),
    }
    (out_dir / 'run_summary.json').write_text(json.dumps(summary, ensure_ascii=False, indent=2), encoding='utf-8')
    logger.info(f"학습 종료: step={trainer.step}, 체크포인트 {final_path}")
    return final_path, trainer.run_log
