# modules/commands.py
"""명령줄 하위 명령 핸들러

train         - 설정 파일로 학습 실행
denoise       - 체크포인트로 영상(파일/디렉토리) 단일 단계 복원
eval          - 분할 평가 (CSV + 표)
selftest      - 커널/스케줄/손실/경계 조건 자기 검사
schedule-plot - M(k) 곡선과 σ 격자 PNG + CSV

모든 핸들러는 종료 코드를 반환한다. 실패하면 구조화된 JSON 한 줄을 stderr에 쓴다.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from configs.device_setting import get_device
from configs.run_setting import (
    ConfigError, dump_run_config, ensure_seed, load_run_config, run_config_from_dict,
)
from modules.checkpoint_store import CheckpointError, load_checkpoint
from modules.consistency_model import ConsistencyFunction, denoise
from modules.evaluator import EVAL_STREAM, evaluate_split
from modules.self_test import run_self_tests
from modules.trainer import build_datasets, train_run
from utils.image_io import PNG_SUFFIXES, read_image, save_display_png, write_png16
from utils.metric_calculator import MetricCalculator
from utils.paired_dataset import DEFAULT_HU_WINDOW, DatasetError, denormalize_hu, normalize_hu
from utils.schedule_visualizer import create_schedule_plot

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = PNG_SUFFIXES | {'.raw'}
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def report_error(kind: str, message: str, key: str | None = None):
    """구조화된 오류 한 줄 (stderr)"""
    payload = {'error': kind, 'message': message}
    if key is not None:
        payload['key'] = key
    print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)


def run_command(handler, args) -> int:
    """핸들러 실행 후 예외를 종료 코드와 구조화된 오류로 바꾼다"""
    try:
        return handler(args)
    except ConfigError as e:
        report_error('config', str(e), e.key)
        return EXIT_USAGE
    except CheckpointError as e:
        report_error('checkpoint', str(e))
        return EXIT_FAILURE
    except DatasetError as e:
        report_error('dataset', str(e))
        return EXIT_FAILURE
    except (ValueError, FileNotFoundError) as e:
        report_error('invalid_input', str(e))
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"명령 실행 중 오류 발생: {str(e)}", exc_info=True)
        report_error('internal', str(e))
        return EXIT_FAILURE


def write_outputs_manifest(out_dir, command: str, seed: int | None, extra: dict | None = None) -> Path:
    """출력 디렉토리의 생성 파일 목록"""
    out_dir = Path(out_dir)
    files = sorted(
        str(p.relative_to(out_dir)) for p in out_dir.rglob('*')
        if p.is_file() and p.name != 'outputs_manifest.json'
    )
    manifest = {'command': command, 'seed': seed, 'files': files}
    manifest.update(extra or {})
    path = out_dir / 'outputs_manifest.json'
    path.write_text(json.dumps(manifest, ensure_ascii=False, indent=2), encoding='utf-8')
    return path


def load_model(checkpoint_path, device) -> tuple[ConsistencyFunction, object, int]:
    """체크포인트에서 (일관성 함수, RunConfig, 학습 단계)"""
    checkpoint = load_checkpoint(checkpoint_path, map_location=device)
    cfg = run_config_from_dict(checkpoint.run_config)
    f = ConsistencyFunction(cfg.network, cfg.sigma_min, cfg.sigma_data).to(device)
    f.load_state_dict(checkpoint.model_state)
    f.eval()
    logger.info(f"체크포인트 로드: {checkpoint_path} (step={checkpoint.step}, seed={checkpoint.seed})")
    return f, cfg, checkpoint.step


def _list_images(path: Path) -> list[Path]:
    if path.is_dir():
        images = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not images:
            raise FileNotFoundError(f"입력 디렉토리에 영상이 없습니다: {path}")
        return images
    if not path.exists():
        raise FileNotFoundError(f"입력 영상이 없습니다: {path}")
    return [path]


def _ground_truth_for(image: Path, ground_truth: Path | None, single: bool) -> Path | None:
    if ground_truth is None:
        return None
    if ground_truth.is_dir():
        candidate = ground_truth / image.name
        return candidate if candidate.exists() else None
    return ground_truth if single else None


def cmd_train(args) -> int:
    """설정 파일로 학습을 실행한다"""
    cfg = load_run_config(args.config, args.override, seed=args.seed, output_dir=args.out)
    if args.sigma_star is not None:
        cfg = dataclasses.replace(cfg, sigma_star=args.sigma_star)
    cfg = ensure_seed(cfg)

    out_dir = Path(cfg.output_dir)
    dump_run_config(cfg, out_dir / 'resolved_config.yaml')
    logger.info(f"학습 시작: K={cfg.K}, |B|={cfg.batch_size}, D={cfg.D}, seed={cfg.seed}, 출력 {out_dir}")

    checkpoint, run_log = train_run(cfg, out_dir, resume=args.resume, device=get_device(),
                                    progress=not args.quiet)
    write_outputs_manifest(out_dir, 'train', cfg.seed, {'checkpoint': str(checkpoint.relative_to(out_dir))})
    print(f"학습 완료: {len(run_log.steps)}단계, 체크포인트 {checkpoint}")
    return EXIT_OK


def cmd_denoise(args) -> int:
    """체크포인트로 영상을 단일 단계 복원한다 (이미지당 NFE=1)"""
    device = get_device()
    f, cfg, _ = load_model(args.checkpoint, device)
    sigma_star = cfg.inference_sigma if args.sigma_star is None else args.sigma_star
    seed = cfg.seed if args.seed is None else args.seed
    window = tuple(args.hu_window) if args.hu_window else DEFAULT_HU_WINDOW

    source = Path(args.input)
    out_dir = Path(args.out)
    input_dir = source if source.is_dir() else source.parent
    if out_dir.resolve() == input_dir.resolve():
        raise ValueError(f"출력 디렉토리는 입력 디렉토리와 달라야 합니다: {out_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)

    images = _list_images(source)
    ground_truth = Path(args.ground_truth) if args.ground_truth else None
    rows = []
    for index, image in enumerate(images):
        y_norm = normalize_hu(read_image(image), window)
        y = torch.as_tensor(y_norm, dtype=torch.float32, device=device)[None, None]

        before = f.nfe
        output = denoise(f, y, sigma_star, np.random.default_rng([seed, EVAL_STREAM, index]), aug_dim=cfg.D)
        restored = output[0, 0].detach().cpu().numpy().astype(np.float64)
        restored_hu = denormalize_hu(np.clip(restored, -1.0, 1.0), window)

        write_png16(restored_hu, out_dir / f"{image.stem}_denoised.png")
        if args.display:
            save_display_png(restored_hu, out_dir / f"{image.stem}_display.png", args.window, args.level)

        row = {'image': image.name, 'nfe': f.nfe - before, 'sigma_star': sigma_star}
        truth = _ground_truth_for(image, ground_truth, single=len(images) == 1)
        if truth is not None:
            x_norm = normalize_hu(read_image(truth), window)
            row.update({
                'ssim': MetricCalculator.ssim(restored, x_norm),
                'psnr': MetricCalculator.psnr(restored, x_norm),
                'baseline_ssim': MetricCalculator.ssim(y_norm, x_norm),
                'baseline_psnr': MetricCalculator.psnr(y_norm, x_norm),
            })
        rows.append(row)
        logger.info(f"복원 완료: {image.name} (NFE={row['nfe']})")

    pd.DataFrame(rows).to_csv(out_dir / 'denoise_report.csv', index=False)
    write_outputs_manifest(out_dir, 'denoise', seed, {'sigma_star': sigma_star, 'checkpoint': str(args.checkpoint)})
    print(f"{len(rows)}장 복원 완료 (σ*={sigma_star:g}): {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    """체크포인트로 분할 하나를 평가한다"""
    device = get_device()
    f, cfg, step = load_model(args.checkpoint, device)
    if args.manifest:
        data = dataclasses.replace(cfg.data, source='manifest', manifest=args.manifest, root=args.root)
        cfg = dataclasses.replace(cfg, data=data)
    sigma_star = cfg.inference_sigma if args.sigma_star is None else args.sigma_star

    datasets = build_datasets(cfg)
    dataset = datasets[args.split]
    if len(dataset) == 0:
        raise DatasetError(f"{args.split} 분할이 비어 있습니다")
    crop_mode = {'train': cfg.data.val_crop, 'val': cfg.data.val_crop, 'test': cfg.data.test_crop}[args.split]

    report = evaluate_split(
        f, dataset, args.split, sigma_star, cfg.seed, crop_mode=crop_mode, crop_size=cfg.data.crop_size,
        aug_dim=cfg.D, limit=args.limit, device=device,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / 'eval_report.csv')
    table = report.to_table()
    (out_dir / 'eval_table.txt').write_text(table + '\n', encoding='utf-8')
    write_outputs_manifest(out_dir, 'eval', cfg.seed, {'split': args.split, 'sigma_star': sigma_star, 'step': step})
    print(table)
    return EXIT_OK if report.rows else EXIT_FAILURE


def cmd_selftest(args) -> int:
    """자기 검사를 실행하고 속성별 통과 여부를 출력한다"""
    results = run_self_tests(seed=args.seed if args.seed is not None else 0, draws=args.draws)
    for result in results:
        print(f"[{'PASS' if result.passed else 'FAIL'}] {result.name}: {result.detail}")
    failed = [r.name for r in results if not r.passed]
    print(f"총 {len(results)}개 중 {len(results) - len(failed)}개 통과")
    return EXIT_OK if not failed else EXIT_FAILURE


def cmd_schedule_plot(args) -> int:
    """설정의 스케줄로 M(k) 곡선과 σ 격자를 그린다"""
    cfg = load_run_config(args.config, args.override, seed=args.seed)
    out_dir = Path(args.out) if args.out else Path(cfg.output_dir) / 'schedule'
    files = create_schedule_plot(cfg.schedule, out_dir, cfg.sigma_min, cfg.sigma_max, cfg.rho)
    write_outputs_manifest(out_dir, 'schedule-plot', cfg.seed)
    print(f"스케줄 그래프 저장: {', '.join(str(p) for p in files)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pfct', description='포아송 흐름 일관성 학습 기반 저선량 CT 복원')
    sub = parser.add_subparsers(dest='command', required=True)

    train = sub.add_parser('train', help='학습 실행')
    train.add_argument('--config', default=None, help='YAML 설정 (기본: configs/default_run.yaml)')
    train.add_argument('--seed', type=int, default=None)
    train.add_argument('--out', default=None, help='출력 디렉토리')
    train.add_argument('--sigma-star', type=float, default=None, help='복원 노이즈 레벨 σ*')
    train.add_argument('--override', action='append', default=[], metavar='KEY=VALUE')
    train.add_argument('--resume', action='store_true', help='최신 체크포인트에서 재개')
    train.add_argument('--quiet', action='store_true', help='진행률 표시 끄기')
    train.set_defaults(handler=cmd_train)

    den = sub.add_parser('denoise', help='단일 단계 복원')
    den.add_argument('--checkpoint', required=True)
    den.add_argument('--input', required=True, help='영상 파일 또는 디렉토리')
    den.add_argument('--out', required=True)
    den.add_argument('--sigma-star', type=float, default=None)
    den.add_argument('--seed', type=int, default=None)
    den.add_argument('--ground-truth', default=None, help='전선량 영상 (파일 또는 같은 이름의 디렉토리)')
    den.add_argument('--hu-window', type=float, nargs=2, default=None, metavar=('LOW', 'HIGH'))
    den.add_argument('--display', action='store_true', help='창/레벨 표시용 PNG 추가 출력')
    den.add_argument('--window', type=float, default=350.0)
    den.add_argument('--level', type=float, default=50.0)
    den.set_defaults(handler=cmd_denoise)

    ev = sub.add_parser('eval', help='분할 평가')
    ev.add_argument('--checkpoint', required=True)
    ev.add_argument('--split', choices=['train', 'val', 'test'], default='test')
    ev.add_argument('--manifest', default=None, help='사용자 매니페스트 (없으면 체크포인트 설정의 데이터)')
    ev.add_argument('--root', default=None, help='매니페스트 상대 경로 기준 디렉토리')
    ev.add_argument('--out', required=True)
    ev.add_argument('--sigma-star', type=float, default=None)
    ev.add_argument('--limit', type=int, default=None)
    ev.set_defaults(handler=cmd_eval)

    st = sub.add_parser('selftest', help='자기 검사')
    st.add_argument('--seed', type=int, default=None)
    st.add_argument('--draws', type=int, default=100_000)
    st.set_defaults(handler=cmd_selftest)

    sp = sub.add_parser('schedule-plot', help='스케줄 그래프')
    sp.add_argument('--config', default=None)
    sp.add_argument('--seed', type=int, default=None)
    sp.add_argument('--out', default=None)
    sp.add_argument('--override', action='append', default=[], metavar='KEY=VALUE')
    sp.set_defaults(handler=cmd_schedule_plot)

    return parser
