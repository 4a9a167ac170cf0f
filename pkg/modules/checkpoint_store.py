# modules/checkpoint_store.py
"""버전이 있는 체크포인트 컨테이너

바이트 배치:
    magic b"PFCTCKPT" (8B)
    schema version  >H (빅엔디언 uint16)
    header length   >I (빅엔디언 uint32)
    header          UTF-8 JSON
    tensor blobs    리틀엔디언 (<f4, <f8, <i8, ...) 연속 배치, offset은 블록 시작 기준

header 키: schema_version, step, seed, run_config, network_config, rng_state,
           run_log, tensors[{name, dtype, shape, offset, nbytes}], optimizer_meta
쓰기는 같은 디렉토리 임시 파일에 쓴 뒤 os.replace로 원자적으로 교체한다.
"""

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

logger = logging.getLogger(__name__)

MAGIC = b'PFCTCKPT'
SCHEMA_VERSION = 1
_PREFIX = struct.Struct('>8sHI')

MODEL_PREFIX = 'model/'
OPTIMIZER_PREFIX = 'optimizer/'

_TORCH_TO_NUMPY = {
    torch.float32: '<f4',
    torch.float64: '<f8',
    torch.float16: '<f2',
    torch.int64: '<i8',
    torch.int32: '<i4',
    torch.uint8: '|u1',
    torch.bool: '|b1',
}


class CheckpointError(ValueError):
    """체크포인트 포맷/스키마 버전 문제"""


@dataclass
class Checkpoint:
    """메모리상의 체크포인트 내용"""

    step: int
    seed: int
    run_config: dict
    network_config: dict
    rng_state: dict
    run_log: dict = field(default_factory=dict)
    model_state: dict[str, torch.Tensor] = field(default_factory=dict)
    optimizer_state: dict | None = None


def _tensor_to_bytes(tensor: torch.Tensor) -> tuple[str, bytes]:
    tensor = tensor.detach().cpu().contiguous()
    if tensor.dtype not in _TORCH_TO_NUMPY:
        raise CheckpointError(f"저장할 수 없는 텐서 dtype입니다: {tensor.dtype}")
    dtype = _TORCH_TO_NUMPY[tensor.dtype]
    return dtype, tensor.numpy().astype(dtype, copy=False).tobytes()


def _split_optimizer_state(state: dict) -> tuple[dict, dict[str, torch.Tensor]]:
    """옵티마이저 state_dict를 JSON 메타 + 텐서 목록으로 나눈다"""
    tensors = {}
    per_param = {}
    for param_id, slots in state['state'].items():
        entry = {}
        for slot, value in slots.items():
            if torch.is_tensor(value):
                key = f"{OPTIMIZER_PREFIX}{param_id}/{slot}"
                tensors[key] = value
                entry[slot] = {'tensor': key}
            else:
                entry[slot] = {'value': value}
        per_param[str(param_id)] = entry
    meta = {'state': per_param, 'param_groups': state['param_groups']}
    return meta, tensors


def _join_optimizer_state(meta: dict, tensors: dict[str, torch.Tensor]) -> dict:
    state = {}
    for param_id, slots in meta['state'].items():
        state[int(param_id)] = {
            slot: tensors[spec['tensor']] if 'tensor' in spec else spec['value']
            for slot, spec in slots.items()
        }
    return {'state': state, 'param_groups': meta['param_groups']}


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    """
    체크포인트를 원자적으로 저장한다.

    Returns:
        저장된 경로
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    tensors = {f"{MODEL_PREFIX}{name}": value for name, value in checkpoint.model_state.items()}
    optimizer_meta = None
    if checkpoint.optimizer_state is not None:
        optimizer_meta, optimizer_tensors = _split_optimizer_state(checkpoint.optimizer_state)
        tensors.update(optimizer_tensors)

    index = []
    blobs = []
    offset = 0
    for name, tensor in tensors.items():
        dtype, blob = _tensor_to_bytes(tensor)
        index.append({'name': name, 'dtype': dtype, 'shape': list(tensor.shape), 'offset': offset, 'nbytes': len(blob)})
        blobs.append(blob)
        offset += len(blob)

    header = {
        'schema_version': SCHEMA_VERSION,
        'step': checkpoint.step,
        'seed': checkpoint.seed,
        'run_config': checkpoint.run_config,
        'network_config': checkpoint.network_config,
        'rng_state': checkpoint.rng_state,
        'run_log': checkpoint.run_log,
        'tensors': index,
        'optimizer_meta': optimizer_meta,
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode('utf-8')

    fd, tmp_name = tempfile.mkstemp(prefix=path.name + '.', suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as fh:
            fh.write(_PREFIX.pack(MAGIC, SCHEMA_VERSION, len(header_bytes)))
            fh.write(header_bytes)
            for blob in blobs:
                fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except Exception:
        Path(tmp_name).unlink(missing_ok=True)
        raise

    logger.info(f"체크포인트 저장: {path} (step={checkpoint.step}, 텐서 {len(index)}개)")
    return path


def read_header(path) -> tuple[dict, int]:
    """(JSON header, 텐서 블록 시작 위치)"""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"체크포인트 파일이 없습니다: {path}")

    with open(path, 'rb') as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size:
            raise CheckpointError(f"체크포인트가 잘렸습니다: {path}")
        magic, version, header_len = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise CheckpointError(f"체크포인트 파일이 아닙니다 (magic={magic!r}): {path}")
        if version != SCHEMA_VERSION:
            raise CheckpointError(
                f"호환되지 않는 체크포인트 스키마 버전: 파일={version}, 지원={SCHEMA_VERSION} ({path})"
            )
        raw = fh.read(header_len)
        if len(raw) < header_len:
            raise CheckpointError(f"체크포인트 헤더가 잘렸습니다: {path}")

    try:
        header = json.loads(raw.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"체크포인트 헤더를 해석할 수 없습니다 ({path}): {e}") from e
    return header, _PREFIX.size + header_len


def load_checkpoint(path, map_location: str | torch.device = 'cpu') -> Checkpoint:
    """
    체크포인트를 읽는다.

    Raises:
        CheckpointError: magic/스키마 버전 불일치, 잘린 파일
    """
    header, data_start = read_header(path)
    payload = Path(path).read_bytes()[data_start:]

    tensors = {}
    for spec in header['tensors']:
        end = spec['offset'] + spec['nbytes']
        if end > len(payload):
            raise CheckpointError(f"텐서 데이터가 잘렸습니다: {spec['name']} ({path})")
        array = np.frombuffer(payload[spec['offset']:end], dtype=np.dtype(spec['dtype'])).reshape(spec['shape'])
        tensors[spec['name']] = torch.from_numpy(array.astype(array.dtype.newbyteorder('='), copy=True)).to(map_location)

    model_state = {
        name[len(MODEL_PREFIX):]: value for name, value in tensors.items() if name.startswith(MODEL_PREFIX)
    }
    optimizer_state = None
    if header.get('optimizer_meta') is not None:
        optimizer_state = _join_optimizer_state(header['optimizer_meta'], tensors)

    return Checkpoint(
        step=int(header['step']),
        seed=int(header['seed']),
        run_config=header['run_config'],
        network_config=header['network_config'],
        rng_state=header['rng_state'],
        run_log=header.get('run_log') or {},
        model_state=model_state,
        optimizer_state=optimizer_state,
    )


def checkpoint_name(step: int) -> str:
    return f"step_{step:08d}.ckpt"


def latest_checkpoint(directory) -> Path | None:
    """디렉토리에서 단계가 가장 큰 체크포인트"""
    directory = Path(directory)
    if not directory.is_dir():
        return None
    candidates = sorted(directory.glob('step_*.ckpt'))
    return candidates[-1] if candidates else None
