# utils/image_io.py
"""CT 영상 파일 입출력

지원 형식:
- 16-bit 무손실 그레이스케일 PNG/TIFF (pillow). 저장값 = HU - hu_offset
- raw float32 + JSON 사이드카. 바이트 순서는 항상 리틀엔디언('<f4')으로 명시한다.
  사이드카(<파일>.json): {"shape": [H, W], "dtype": "<f4", "hu_offset": 0.0}
"""

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

# 16-bit 영상의 일반적인 CT 저장 관례 (저장값 0 = -1024 HU)
DEFAULT_HU_OFFSET = -1024.0
RAW_DTYPE = '<f4'
PNG_SUFFIXES = {'.png', '.tif', '.tiff'}


def sidecar_path(path: Path) -> Path:
    """raw 파일의 사이드카 경로"""
    return path.with_name(path.name + '.json')


def read_image(path, hu_offset: float | None = None) -> np.ndarray:
    """
    영상 파일을 HU 단위 float64 2D 배열로 읽는다.

    Args:
        path: .png/.tif/.tiff 또는 .raw 경로
        hu_offset: 저장값에 더할 HU 오프셋. None이면 형식별 기본값
            (16-bit: -1024, raw: 사이드카의 hu_offset)

    Raises:
        FileNotFoundError: 파일 또는 사이드카 없음
        ValueError: 지원하지 않는 형식, 사이드카 스키마 위반, 크기 불일치
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"영상 파일이 없습니다: {path}")

    suffix = path.suffix.lower()
    if suffix in PNG_SUFFIXES:
        with Image.open(path) as img:
            if img.mode not in ('I;16', 'I;16B', 'I;16L', 'I', 'L'):
                raise ValueError(f"16-bit 그레이스케일 영상이 아닙니다 (mode={img.mode}): {path}")
            values = np.array(img, dtype=np.float64)
        offset = DEFAULT_HU_OFFSET if hu_offset is None else hu_offset
        return values + offset

    if suffix == '.raw':
        side = sidecar_path(path)
        if not side.exists():
            raise FileNotFoundError(f"raw 영상의 사이드카 헤더가 없습니다: {side}")
        header = json.loads(side.read_text(encoding='utf-8'))
        try:
            shape = tuple(int(s) for s in header['shape'])
            dtype = np.dtype(header.get('dtype', RAW_DTYPE))
        except (KeyError, TypeError) as e:
            raise ValueError(f"사이드카 헤더 형식이 잘못되었습니다 ({side}): {e}")
        if dtype.byteorder not in ('<', '|') and not (dtype.byteorder == '=' and np.little_endian):
            raise ValueError(f"raw 영상은 리틀엔디언이어야 합니다 (dtype={dtype.str}): {path}")

        values = np.fromfile(path, dtype=dtype)
        if values.size != int(np.prod(shape)):
            raise ValueError(f"raw 크기 불일치: 헤더 shape={shape}, 실제 원소 수={values.size} ({path})")
        offset = float(header.get('hu_offset', 0.0)) if hu_offset is None else hu_offset
        return values.reshape(shape).astype(np.float64) + offset

    raise ValueError(f"지원하지 않는 영상 형식입니다: {path}")


def write_png16(hu: np.ndarray, path, hu_offset: float = DEFAULT_HU_OFFSET) -> Path:
    """HU 영상을 16-bit PNG로 저장한다 (저장값 = HU - hu_offset, [0, 65535]로 자름)"""
    path = Path(path)
    stored = np.clip(np.rint(np.asarray(hu, dtype=np.float64) - hu_offset), 0, 65535).astype(np.uint16)
    Image.fromarray(stored).save(path)
    return path


def write_raw(hu: np.ndarray, path, hu_offset: float = 0.0) -> Path:
    """HU 영상을 raw float32(리틀엔디언) + 사이드카로 저장한다"""
    path = Path(path)
    data = (np.asarray(hu, dtype=np.float64) - hu_offset).astype(RAW_DTYPE)
    data.tofile(path)
    sidecar_path(path).write_text(
        json.dumps({'shape': list(data.shape), 'dtype': RAW_DTYPE, 'hu_offset': hu_offset}),
        encoding='utf-8',
    )
    return path


def save_display_png(hu: np.ndarray, path, window: float = 350.0, level: float = 50.0) -> Path:
    """창/레벨을 적용한 8-bit 표시용 PNG (판독용 화면 관례: W350/L50)"""
    if window <= 0:
        raise ValueError(f"window는 양수여야 합니다: {window}")
    path = Path(path)
    lo = level - window / 2.0
    scaled = (np.asarray(hu, dtype=np.float64) - lo) / window
    Image.fromarray(np.round(np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)).save(path)
    return path
