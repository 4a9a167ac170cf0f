"""
학습 루프 단위 테스트 (Unit Tests)

Feature: pfct-ldct-denoising
테스트 대상: modules/trainer.py - PFCTTrainer, train_run, make_batch, PrefetchThread
"""

import dataclasses
import json
import math
import shutil
from unittest.mock import patch

import numpy as np
import pytest
import torch

from configs.run_setting import load_run_config
from modules.checkpoint_store import CheckpointError, checkpoint_name, load_checkpoint, read_header
from modules.consistency_loss import NonFiniteLossError, consistency_loss
from modules.trainer import PFCTTrainer, PrefetchThread, build_datasets, make_batch, train_run
from modules.evaluator import evaluate_split
from utils.paired_dataset import DatasetError
from utils.schedule_calculator import ScheduleCalculator


def _params(trainer):
    return {name: value.detach().clone() for name, value in trainer.model.state_dict().items()}


def _same_params(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


class TestMakeBatch:

    def test_shape_and_dtype(self, tiny_config):
        cfg = tiny_config()
        x, y = make_batch(build_datasets(cfg)['train'], cfg, 0)
        assert x.shape == y.shape == (4, 1, 16, 16)
        assert x.dtype == np.float32

    def test_batch_depends_only_on_seed_and_step(self, tiny_config):
        cfg = tiny_config()
        dataset = build_datasets(cfg)['train']
        a = make_batch(dataset, cfg, 3)
        b = make_batch(build_datasets(cfg)['train'], cfg, 3)
        c = make_batch(dataset, cfg, 2)
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.array_equal(a[1], c[1])

    def test_empty_dataset_rejected(self, tiny_config):
        with pytest.raises(DatasetError):
            make_batch([], tiny_config(), 0)


class TestPrefetchThread:

    def test_batches_arrive_in_step_order(self, tiny_config):
        cfg = tiny_config()
        thread = PrefetchThread(build_datasets(cfg)['train'], cfg, 1, 4)
        thread.start()
        try:
            steps = [thread.next_batch()[0] for _ in range(3)]
        finally:
            thread.stop()
            thread.join(timeout=5)
        assert steps == [1, 2, 3]

    def test_worker_error_is_reraised(self, tiny_config):
        thread = PrefetchThread([], tiny_config(), 0, 2)
        thread.start()
        try:
            with pytest.raises(DatasetError):
                thread.next_batch()
        finally:
            thread.stop()
            thread.join(timeout=5)


class TestTrainStep:

    def test_requires_seed(self, tiny_config):
        with pytest.raises(ValueError, match="seed"):
            PFCTTrainer(tiny_config(seed=None))

    def test_zero_learning_rate_leaves_parameters(self, tiny_config):
        cfg = tiny_config(learning_rate=0.0)
        trainer = PFCTTrainer(cfg)
        before = _params(trainer)
        x, y = make_batch(build_datasets(cfg)['train'], cfg, 0)
        result = trainer.train_step(x, y, 0)
        assert math.isfinite(result.loss)
        assert _same_params(before, _params(trainer))

    def test_update_changes_parameters(self, tiny_config):
        cfg = tiny_config(learning_rate=1e-2)
        trainer = PFCTTrainer(cfg)
        before = _params(trainer)
        x, y = make_batch(build_datasets(cfg)['train'], cfg, 0)
        trainer.train_step(x, y, 0)
        assert not _same_params(before, _params(trainer))
        assert trainer.step == 1

    def test_same_seed_same_losses(self, tiny_config):
        cfg = tiny_config()
        dataset = build_datasets(cfg)['train']
        losses = []
        for _ in range(2):
            trainer = PFCTTrainer(cfg)
            losses.append([trainer.train_step(*make_batch(dataset, cfg, k), k).loss for k in range(3)])
        assert losses[0] == losses[1]

    def test_global_torch_rng_untouched_by_init(self, tiny_config):
        torch.manual_seed(123)
        expected = torch.rand(3)
        torch.manual_seed(123)
        PFCTTrainer(tiny_config())
        assert torch.equal(torch.rand(3), expected)

    def test_step_out_of_range_rejected(self, tiny_config):
        cfg = tiny_config()
        trainer = PFCTTrainer(cfg)
        x, y = make_batch(build_datasets(cfg)['train'], cfg, 0)
        with pytest.raises(ValueError, match="단계 k"):
            trainer.train_step(x, y, cfg.K)

    def test_sigma_pairs_are_adjacent_grid_levels(self, tiny_config):
        cfg = tiny_config(K=300)
        trainer = PFCTTrainer(cfg)
        dataset = build_datasets(cfg)['train']
        with patch('modules.trainer.consistency_loss', wraps=consistency_loss) as spy:
            for k in (0, 150, 299):
                result = trainer.train_step(*make_batch(dataset, cfg, k), k)
                draw = spy.call_args.args[1]
                grid = ScheduleCalculator.sigma_grid(result.M, cfg.sigma_min, cfg.sigma_max, cfg.rho).sigmas
                lo_index = np.searchsorted(grid, draw.sigma_lo)
                np.testing.assert_array_equal(grid[lo_index], draw.sigma_lo)
                np.testing.assert_array_equal(grid[lo_index + 1], draw.sigma_hi)

    def test_nonfinite_loss_skips_update(self, tiny_config):
        cfg = tiny_config(learning_rate=1e-2)
        trainer = PFCTTrainer(cfg)
        before = _params(trainer)
        x, y = make_batch(build_datasets(cfg)['train'], cfg, 0)
        error = NonFiniteLossError("유한하지 않은 손실", [(0.1, 0.2)])
        with patch('modules.trainer.consistency_loss', side_effect=error):
            result = trainer.train_step(x, y, 0)
        assert result.skipped
        assert math.isnan(result.loss)
        assert trainer.step == 1
        assert _same_params(before, _params(trainer))

    def test_no_ema_state(self, tiny_config):
        trainer = PFCTTrainer(tiny_config())
        assert not any('ema' in name.lower() for name in vars(trainer))
        assert not any('ema' in name.lower() for name in trainer.to_checkpoint().model_state)


class TestCheckpointRestore:

    def test_restore_rejects_other_seed(self, tiny_config):
        checkpoint = PFCTTrainer(tiny_config(seed=1)).to_checkpoint()
        with pytest.raises(CheckpointError, match="seed"):
            PFCTTrainer(tiny_config(seed=2)).restore(checkpoint)

    def test_noise_stream_state_saved(self, tiny_config, tmp_path):
        cfg = tiny_config()
        trainer = PFCTTrainer(cfg)
        trainer.train_step(*make_batch(build_datasets(cfg)['train'], cfg, 0), 0)
        path = trainer.save(tmp_path)
        assert path.name == checkpoint_name(1)

        restored = PFCTTrainer(cfg)
        restored.restore(load_checkpoint(path))
        assert restored.step == 1
        assert restored.rng.random() == trainer.rng.random()


class TestTrainRun:

    def test_zero_steps_returns_initial_model(self, tiny_config, tmp_path):
        cfg = tiny_config(K=0)
        final_path, run_log = train_run(cfg, tmp_path, progress=False)
        assert final_path.name == checkpoint_name(0)
        assert run_log.steps == []
        initial = PFCTTrainer(cfg)
        assert _same_params(_params(initial), load_checkpoint(final_path).model_state)

    def test_outputs_written(self, tiny_config, tmp_path):
        cfg = tiny_config()
        final_path, run_log = train_run(cfg, tmp_path, progress=False)

        assert final_path.name == checkpoint_name(4)
        assert [r.step for r in run_log.steps] == [0, 1, 2, 3]
        assert [r.step for r in run_log.evals] == [2, 4]
        for name in ('run_log.csv', 'eval_log.csv', 'run_summary.json', 'loss_curve.png'):
            assert (tmp_path / name).exists(), name
        assert (tmp_path / 'run_log.csv').read_text(encoding='utf-8').startswith('# seed=1')

        summary = json.loads((tmp_path / 'run_summary.json').read_text(encoding='utf-8'))
        assert summary['seed'] == 1
        assert summary['final_step'] == 4
        assert summary['sigma_star'] == cfg.sigma_max

        header, _ = read_header(final_path)
        assert header['seed'] == 1
        assert not any(part == 'ema' for key in header for part in key.split('_'))

    def test_schedule_is_non_decreasing(self, tiny_config, tmp_path):
        cfg = tiny_config(K=12, checkpoint_interval=12, eval_interval=12)
        _, run_log = train_run(cfg, tmp_path, progress=False)
        values = [r.M for r in run_log.steps]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_old_checkpoints_are_cleaned(self, tiny_config, tmp_path):
        cfg = tiny_config(K=6, checkpoint_interval=1, eval_interval=6, keep_checkpoints=2)
        final_path, _ = train_run(cfg, tmp_path, progress=False)
        names = sorted(p.name for p in (tmp_path / 'checkpoints').glob('*.ckpt'))
        assert names == [checkpoint_name(5), checkpoint_name(6)]
        assert final_path.exists()

    def test_two_runs_are_identical(self, tiny_config, tmp_path):
        cfg = tiny_config()
        _, first = train_run(cfg, tmp_path / 'a', progress=False)
        _, second = train_run(cfg, tmp_path / 'b', progress=False)
        assert first == second

    def test_resume_matches_uninterrupted_run(self, tiny_config, tmp_path):
        cfg = tiny_config()
        full_path, full_log = train_run(cfg, tmp_path / 'full', progress=False)

        # 2단계 뒤 중단된 실행을 흉내 낸다
        resumed_dir = tmp_path / 'resumed' / 'checkpoints'
        resumed_dir.mkdir(parents=True)
        shutil.copy(tmp_path / 'full' / 'checkpoints' / checkpoint_name(2), resumed_dir)
        resumed_path, resumed_log = train_run(cfg, tmp_path / 'resumed', resume=True, progress=False)

        assert resumed_log == full_log
        full = load_checkpoint(full_path)
        resumed = load_checkpoint(resumed_path)
        assert _same_params(full.model_state, resumed.model_state)
        assert full.rng_state == resumed.rng_state

    def test_resume_without_checkpoint_starts_fresh(self, tiny_config, tmp_path):
        cfg = tiny_config(K=2)
        final_path, run_log = train_run(cfg, tmp_path, resume=True, progress=False)
        assert len(run_log.steps) == 2
        assert final_path.name == checkpoint_name(2)

    def test_indivisible_crop_rejected(self, tiny_config, tmp_path):
        cfg = tiny_config()
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, crop_size=14))
        with pytest.raises(ValueError, match="2\\^depth"):
            train_run(cfg, tmp_path, progress=False)


@pytest.mark.slow
class TestDeskScaleRun:
    """
    기본 설정(64×64 팬텀, dose 0.25, |B|=16, K=20000, D=2048) 전체 학습

    학습 후 테스트 분할에서 복원 영상 SSIM이 입력보다 0.02 이상, PSNR이 1 dB 이상 높아야 하고,
    창 평균 손실은 step 100보다 마지막 step에서 작아야 한다.
    """

    def test_denoising_improves_held_out_metrics(self, tmp_path):
        cfg = load_run_config(output_dir=str(tmp_path))
        final_path, run_log = train_run(cfg, tmp_path, progress=False)

        average = run_log.loss_moving_average()
        assert average.loc[cfg.K - 1] < average.loc[100]

        trainer = PFCTTrainer(cfg)
        trainer.restore(load_checkpoint(final_path))
        test_set = build_datasets(cfg)['test']
        report = evaluate_split(trainer.model, test_set, 'test', cfg.inference_sigma, cfg.seed,
                                crop_mode=cfg.data.test_crop, aug_dim=cfg.D)
        summary = report.summary()
        assert summary['nfe'] == [1]
        assert summary['ssim']['mean'] - summary['baseline_ssim']['mean'] >= 0.02
        assert summary['psnr']['mean'] - summary['baseline_psnr']['mean'] >= 1.0
