# configs/run_setting.py
"""실행 설정 (YAML) 스키마와 로더

우선순위: dataclass 기본값 < YAML 파일 < --override key.sub=value < 전용 플래그(--seed, --out)
알 수 없는 키는 키 경로와 함께 ConfigError로 거부한다.
"""

import dataclasses
import logging
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from modules.consistency_loss import LossConfig
from modules.consistency_model import NetworkConfig
from utils.noise_selector import NoiseSelectConfig
from utils.paired_dataset import resolve_crop
from utils.phantom_generator import PhantomConfig
from utils.schedule_calculator import ScheduleConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent / 'default_run.yaml'
DATA_SOURCES = ('synthetic', 'manifest')


class ConfigError(ValueError):
    """설정 스키마 위반. key는 문제 키 경로"""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass
class DataConfig:
    """학습 데이터 출처와 크롭 프로토콜"""

    source: str = 'synthetic'
    manifest: str | None = None
    root: str | None = None
    crop_size: int = 64
    train_crop: str = 'random'
    val_crop: str = 'center'
    test_crop: str = 'full'
    val_limit: int = 16

    def __post_init__(self):
        if self.source not in DATA_SOURCES:
            raise ConfigError(f"data.source는 {DATA_SOURCES} 중 하나여야 합니다: {self.source!r}", 'data.source')
        if self.source == 'manifest' and not self.manifest:
            raise ConfigError("data.source=manifest 에는 data.manifest 경로가 필요합니다", 'data.manifest')
        if self.crop_size < 1:
            raise ConfigError(f"data.crop_size는 양수여야 합니다: {self.crop_size}", 'data.crop_size')
        for key in ('train_crop', 'val_crop', 'test_crop'):
            try:
                resolve_crop(getattr(self, key), self.crop_size)
            except ValueError as e:
                raise ConfigError(str(e), f'data.{key}') from e
        if self.val_limit < 1:
            raise ConfigError(f"data.val_limit는 양수여야 합니다: {self.val_limit}", 'data.val_limit')


@dataclass
class RunConfig:
    """학습 실행 설정. seed는 실행이 만드는 모든 산출물에 기록된다."""

    K: int = 20000
    batch_size: int = 16
    learning_rate: float = 1e-4
    D: int = 2048
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    sigma_data: float = 0.5
    sigma_star: float | None = None
    seed: int | None = None
    checkpoint_interval: int = 1000
    eval_interval: int = 1000
    keep_checkpoints: int = 3
    grad_clip: float = 1.0
    coupled_radii: bool = False
    prefetch: int = 4
    output_dir: str = 'runs/pfct'
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    noise_select: NoiseSelectConfig = field(default_factory=NoiseSelectConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.K < 0:
            raise ConfigError(f"K는 0 이상이어야 합니다: {self.K}", 'K')
        for key in ('batch_size', 'D', 'checkpoint_interval', 'eval_interval', 'keep_checkpoints', 'prefetch'):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}는 양수여야 합니다: {getattr(self, key)}", key)
        for key in ('sigma_data', 'grad_clip', 'rho'):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key}는 양수여야 합니다: {getattr(self, key)}", key)
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate는 음수일 수 없습니다: {self.learning_rate}", 'learning_rate')
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError(f"0 < sigma_min < sigma_max 이어야 합니다: {self.sigma_min}, {self.sigma_max}", 'sigma_min')
        if self.sigma_star is not None and not self.sigma_min <= self.sigma_star:
            raise ConfigError(f"sigma_star는 sigma_min 이상이어야 합니다: {self.sigma_star}", 'sigma_star')
        if self.seed is not None and self.seed < 0:
            raise ConfigError(f"seed는 0 이상이어야 합니다: {self.seed}", 'seed')
        # 스케줄의 K는 실행의 K를 따른다 (K=0 실행은 스케줄을 평가하지 않는다)
        self.schedule = dataclasses.replace(self.schedule, K=max(self.K, 1))

    @property
    def inference_sigma(self) -> float:
        """단일 단계 복원의 σ* (미지정이면 학습된 최대 σ)"""
        return self.sigma_max if self.sigma_star is None else self.sigma_star

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _coerce(value, tp, key: str):
    """YAML 스칼라를 필드 타입으로 맞춘다 (예: '1e-4' → float)"""
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}는 목록이어야 합니다: {value!r}", key)
        inner = typing.get_args(tp)
        return tuple(_coerce(v, inner[min(i, len(inner) - 1)], key) for i, v in enumerate(value))
    if value is None:
        raise ConfigError(f"{key}에 값이 없습니다", key)

    try:
        if tp is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ('true', 'false'):
                return value.lower() == 'true'
            raise ValueError(value)
        if tp is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if tp is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if tp is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}의 값 형식이 잘못되었습니다 (기대: {tp.__name__}): {value!r}", key)
    return value


def _build(cls, data: dict, prefix: str = ''):
    """dict → dataclass (알 수 없는 키 거부, 중첩 dataclass 재귀)"""
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or '설정'}은(는) 매핑이어야 합니다: {data!r}", prefix or None)

    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in names:
            raise ConfigError(f"알 수 없는 설정 키: {path}", path)
        tp = hints[key]
        kwargs[key] = _build(tp, value, path) if _is_dataclass_type(tp) else _coerce(value, tp, path)

    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{prefix or '설정'}: {e}", prefix or None) from e


def _set_path(tree: dict, dotted: str, value):
    parts = dotted.split('.')
    node = tree
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"덮어쓰기 경로가 매핑이 아닙니다: {dotted}", dotted)
        node = child
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """'key.sub=value' → (key.sub, YAML로 해석한 값)"""
    if '=' not in text:
        raise ConfigError(f"덮어쓰기는 key=value 형식이어야 합니다: {text!r}", text)
    key, raw = text.split('=', 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"덮어쓰기 키가 비었습니다: {text!r}", text)
    return key, yaml.safe_load(raw) if raw.strip() else None


def load_run_config(path=None, overrides: list[str] | None = None, seed: int | None = None,
                    output_dir: str | None = None) -> RunConfig:
    """
    설정 파일을 읽어 RunConfig를 만든다.

    Args:
        path: YAML 경로 (None이면 configs/default_run.yaml)
        overrides: 'key.sub=value' 목록
        seed: --seed 값 (가장 높은 우선순위)
        output_dir: --out 값

    Raises:
        ConfigError: 파일 없음, YAML 구문 오류, 스키마 위반
    """
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if not path.exists():
        raise ConfigError(f"설정 파일이 없습니다: {path}", 'config')
    try:
        tree = yaml.safe_load(path.read_text(encoding='utf-8')) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"설정 파일 구문 오류 ({path}): {e}", 'config') from e
    if not isinstance(tree, dict):
        raise ConfigError(f"설정 파일 최상위는 매핑이어야 합니다: {path}", 'config')

    if 'schedule' in tree and isinstance(tree['schedule'], dict) and 'K' in tree['schedule']:
        if tree['schedule']['K'] != max(tree.get('K', RunConfig.K), 1):
            raise ConfigError("schedule.K는 최상위 K와 같아야 합니다 (K만 지정하세요)", 'schedule.K')

    for item in overrides or []:
        key, value = parse_override(item)
        _set_path(tree, key, value)
    if seed is not None:
        tree['seed'] = seed
    if output_dir is not None:
        tree['output_dir'] = output_dir

    cfg = _build(RunConfig, tree)
    logger.info(f"설정 로드 완료: {path} (덮어쓰기 {len(overrides or [])}개)")
    return cfg


def ensure_seed(cfg: RunConfig) -> RunConfig:
    """seed가 없으면 엔트로피에서 하나 정하고 알린다"""
    if cfg.seed is not None:
        return cfg
    chosen = int(np.random.SeedSequence().entropy % (2 ** 32))
    print(f"seed가 지정되지 않아 {chosen}을(를) 사용합니다")
    logger.info(f"자동 선택 seed: {chosen}")
    return dataclasses.replace(cfg, seed=chosen)


def dump_run_config(cfg: RunConfig, path) -> Path:
    """완전히 해석된 설정을 YAML로 남긴다"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value

    path.write_text(yaml.safe_dump(plain(cfg.to_dict()), sort_keys=False, allow_unicode=True), encoding='utf-8')
    return path


def run_config_from_dict(data: dict) -> RunConfig:
    """체크포인트 헤더 등에 저장된 dict에서 복원"""
    return _build(RunConfig, data)
