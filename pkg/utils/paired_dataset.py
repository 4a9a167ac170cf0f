# utils/paired_dataset.py
"""저선량/전선량 영상 쌍 데이터셋

- TrainingPair: 깨끗한 영상 x(전선량)와 조건 영상 y(저선량), 정규화·크롭 이력
- normalize_hu / denormalize_hu: HU 창 [low, high] ↔ [-1, 1] 아핀 변환 (전역 창)
- crop: 학습 random, 검증 center, 테스트 full
- ManifestDataset / load_paired_dataset: 사용자 보유 쌍 데이터 적재
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from utils.image_io import read_image

logger = logging.getLogger(__name__)

DEFAULT_HU_WINDOW = (-1000.0, 1000.0)
CROP_MODES = ('random', 'center', 'full')
# 논문 프로토콜 표기를 그대로 받는다
CROP_ALIASES = {'random128': ('random', 128), 'center128': ('center', 128)}

# 공개 LDCT 벤치마크의 참조 분할 크기 (비교 보고용)
REFERENCE_SPLIT_SIZES = {'train': 11646, 'val': 1752, 'test': 1052}

MANIFEST_COLUMNS = ('case_id', 'split', 'low_dose_file', 'full_dose_file')
MANIFEST_OPTIONAL = ('hu_low', 'hu_high', 'hu_offset')


class DatasetError(ValueError):
    """매니페스트/영상 파일 문제 (문제 항목을 메시지에 담는다)"""


@dataclass
class TrainingPair:
    """전선량 x와 저선량 조건 y. 둘 다 [-1, 1], 같은 모양"""

    clean: np.ndarray
    condition: np.ndarray
    source_id: str
    crop_offset: tuple[int, int] = (0, 0)
    hu_window: tuple[float, float] = DEFAULT_HU_WINDOW
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.clean.shape != self.condition.shape:
            raise ValueError(
                f"x와 y의 모양이 다릅니다 ({self.source_id}): {self.clean.shape} vs {self.condition.shape}"
            )
        if not (np.all(np.isfinite(self.clean)) and np.all(np.isfinite(self.condition))):
            raise ValueError(f"유한하지 않은 화소가 있습니다: {self.source_id}")


def normalize_hu(raw: np.ndarray, window: tuple[float, float] = DEFAULT_HU_WINDOW) -> np.ndarray:
    """
    HU 영상을 [low, high]로 자른 뒤 [-1, 1]로 아핀 변환한다.

    Raises:
        ValueError: low >= high
    """
    low, high = window
    if not low < high:
        raise ValueError(f"HU 창은 low < high 이어야 합니다: {window}")
    clipped = np.clip(np.asarray(raw, dtype=np.float64), low, high)
    return 2.0 * (clipped - low) / (high - low) - 1.0


def denormalize_hu(image: np.ndarray, window: tuple[float, float] = DEFAULT_HU_WINDOW) -> np.ndarray:
    """normalize_hu의 역변환 (창 안쪽 값에 대해)"""
    low, high = window
    if not low < high:
        raise ValueError(f"HU 창은 low < high 이어야 합니다: {window}")
    return (np.asarray(image, dtype=np.float64) + 1.0) * (high - low) / 2.0 + low


def resolve_crop(mode: str, size: int) -> tuple[str, int]:
    """'random128' 같은 프로토콜 표기를 (모드, 크기)로 푼다"""
    if mode in CROP_ALIASES:
        return CROP_ALIASES[mode]
    if mode not in CROP_MODES:
        raise ValueError(f"알 수 없는 크롭 모드입니다: {mode!r} (가능: {CROP_MODES + tuple(CROP_ALIASES)})")
    return mode, size


def crop(pair: TrainingPair, mode: str, rng: np.random.Generator | None = None, size: int = 128) -> TrainingPair:
    """
    영상 쌍을 같은 위치에서 자른다. 오프셋은 원본 기준으로 누적 기록한다.

    Args:
        pair: 원본 쌍
        mode: random / center / full (또는 random128 / center128)
        rng: random 모드에서 오프셋을 뽑을 난수 스트림
        size: 크롭 한 변 길이

    Raises:
        ValueError: 크롭 크기보다 작은 영상, random 모드에 rng 없음
    """
    mode, size = resolve_crop(mode, size)
    if mode == 'full':
        return pair

    height, width = pair.clean.shape[-2:]
    if height < size or width < size:
        raise ValueError(f"영상이 크롭 크기({size})보다 작습니다 ({pair.source_id}): {height}×{width}")

    if mode == 'center':
        top, left = (height - size) // 2, (width - size) // 2
    else:
        if rng is None:
            raise ValueError("random 크롭에는 난수 스트림이 필요합니다")
        top = int(rng.integers(0, height - size + 1))
        left = int(rng.integers(0, width - size + 1))

    window = (slice(top, top + size), slice(left, left + size))
    return replace(
        pair,
        clean=pair.clean[window].copy(),
        condition=pair.condition[window].copy(),
        crop_offset=(pair.crop_offset[0] + top, pair.crop_offset[1] + left),
    )


class ManifestDataset:
    """매니페스트 한 분할(split)의 영상 쌍. 항목은 접근할 때 읽는다."""

    def __init__(self, root: Path, entries: pd.DataFrame, split: str):
        self.root = Path(root)
        self.entries = entries.reset_index(drop=True)
        self.split = split

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> TrainingPair:
        row = self.entries.iloc[index]
        window = (float(row['hu_low']), float(row['hu_high']))
        offset = None if pd.isna(row['hu_offset']) else float(row['hu_offset'])
        try:
            low_hu = read_image(self.root / row['low_dose_file'], hu_offset=offset)
            full_hu = read_image(self.root / row['full_dose_file'], hu_offset=offset)
        except (FileNotFoundError, ValueError) as e:
            raise DatasetError(f"매니페스트 항목 {row['case_id']!r} 적재 실패: {e}") from e

        if low_hu.shape != full_hu.shape:
            raise DatasetError(
                f"매니페스트 항목 {row['case_id']!r}의 영상 모양이 다릅니다: "
                f"low={low_hu.shape}, full={full_hu.shape}"
            )

        return TrainingPair(
            clean=normalize_hu(full_hu, window),
            condition=normalize_hu(low_hu, window),
            source_id=str(row['case_id']),
            hu_window=window,
            provenance={'normalization': 'global_window', 'hu_window': list(window)},
        )


def read_manifest(manifest_path) -> pd.DataFrame:
    """
    매니페스트(CSV)를 읽고 스키마를 검증한다.

    필수 열: case_id, split, low_dose_file, full_dose_file
    선택 열: hu_low, hu_high (기본 -1000, 1000), hu_offset (기본: 형식별)

    Raises:
        DatasetError: 파일 없음, 필수 열 누락, 알 수 없는 열/분할, 잘못된 창
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetError(f"매니페스트 파일이 없습니다: {manifest_path}")

    df = pd.read_csv(manifest_path, comment='#', skipinitialspace=True)
    missing = [c for c in MANIFEST_COLUMNS if c not in df.columns]
    if missing:
        raise DatasetError(f"매니페스트 필수 열이 없습니다: {', '.join(missing)} ({manifest_path})")
    unknown = [c for c in df.columns if c not in MANIFEST_COLUMNS + MANIFEST_OPTIONAL]
    if unknown:
        raise DatasetError(f"매니페스트에 알 수 없는 열이 있습니다: {', '.join(unknown)} ({manifest_path})")

    df = df.copy()
    if 'hu_low' not in df.columns:
        df['hu_low'] = DEFAULT_HU_WINDOW[0]
    if 'hu_high' not in df.columns:
        df['hu_high'] = DEFAULT_HU_WINDOW[1]
    if 'hu_offset' not in df.columns:
        df['hu_offset'] = np.nan
    df['hu_low'] = df['hu_low'].fillna(DEFAULT_HU_WINDOW[0])
    df['hu_high'] = df['hu_high'].fillna(DEFAULT_HU_WINDOW[1])

    for i, row in df.iterrows():
        if row['split'] not in REFERENCE_SPLIT_SIZES:
            raise DatasetError(f"매니페스트 {i + 1}행({row['case_id']!r}): 알 수 없는 split {row['split']!r}")
        if not float(row['hu_low']) < float(row['hu_high']):
            raise DatasetError(
                f"매니페스트 {i + 1}행({row['case_id']!r}): hu_low < hu_high 이어야 합니다 "
                f"({row['hu_low']}, {row['hu_high']})"
            )
    if df['case_id'].duplicated().any():
        dup = df.loc[df['case_id'].duplicated(), 'case_id'].iloc[0]
        raise DatasetError(f"매니페스트에 중복 case_id가 있습니다: {dup!r}")
    return df


def load_paired_dataset(root, manifest, check_files: bool = True) -> dict[str, ManifestDataset]:
    """
    매니페스트로 분할별 데이터셋을 만든다.

    분할 크기는 참조 분할 크기 11,646 / 1,752 / 1,052 와 나란히 로그로 보고한다.

    Args:
        root: 매니페스트 안 상대 경로의 기준 디렉토리
        manifest: 매니페스트 CSV 경로
        check_files: True면 모든 파일의 존재를 미리 확인한다

    Returns:
        {'train': ..., 'val': ..., 'test': ...} (항목이 없는 분할은 빈 데이터셋)
    """
    root = Path(root)
    df = read_manifest(manifest)

    if check_files:
        for _, row in df.iterrows():
            for column in ('low_dose_file', 'full_dose_file'):
                if not (root / row[column]).exists():
                    raise DatasetError(f"매니페스트 항목 {row['case_id']!r}의 {column} 파일이 없습니다: {root / row[column]}")

    splits = {}
    for split, reference in REFERENCE_SPLIT_SIZES.items():
        splits[split] = ManifestDataset(root, df[df['split'] == split], split)
        logger.info(f"{split} 분할: {len(splits[split])}쌍 (참조 {reference:,}쌍)")
    return splits
