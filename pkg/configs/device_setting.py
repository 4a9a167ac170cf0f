import os
from pathlib import Path
from dotenv import load_dotenv
import logging

import torch

logger = logging.getLogger(__name__)

DEVICE_ENV_KEY = 'PFCT_DEVICE'


class DeviceSettings:
    """연산 장치 설정을 관리하는 싱글톤 클래스"""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialize()
        return cls._instance

    def _initialize(self):
        """환경변수에서 장치 설정 로드"""
        # .env 파일이 있으면 로드 (로컬 개발용), 없으면 환경변수에서 직접 읽음 (도커)
        project_root = Path(__file__).parent.parent
        env_path = project_root / '.env'

        if env_path.exists():
            load_dotenv(dotenv_path=env_path)
            logger.debug(f".env 파일 로드: {env_path}")

        self.requested = self._get_env_value(DEVICE_ENV_KEY) or 'auto'
        self._validate_settings()

    def _get_env_value(self, key: str) -> str:
        """환경변수 값을 가져오고 정리"""
        value = os.getenv(key, '').strip()
        if value and value[0] in ['"', "'"] and value[-1] in ['"', "'"]:
            value = value[1:-1]
        return value.lower()

    def _validate_settings(self):
        """장치 이름 형식 검증 (auto, cpu, cuda, cuda:N, mps)"""
        name = self.requested
        if name in ('auto', 'cpu', 'cuda', 'mps'):
            return
        if name.startswith('cuda:') and name[5:].isdigit():
            return
        raise ValueError(f"{DEVICE_ENV_KEY} 값이 올바르지 않습니다: {name!r} (auto/cpu/cuda/cuda:N/mps)")

    def resolve(self) -> torch.device:
        """요청된 장치를 실제 torch.device로 변환 (auto는 cuda → mps → cpu 순)"""
        if self.requested == 'auto':
            if torch.cuda.is_available():
                return torch.device('cuda')
            if getattr(torch.backends, 'mps', None) is not None and torch.backends.mps.is_available():
                return torch.device('mps')
            return torch.device('cpu')

        if self.requested.startswith('cuda') and not torch.cuda.is_available():
            raise ValueError(f"{DEVICE_ENV_KEY}={self.requested} 이지만 CUDA를 사용할 수 없습니다")
        return torch.device(self.requested)


def get_device() -> torch.device:
    """현재 설정의 연산 장치 반환"""
    device = DeviceSettings().resolve()
    logger.info(f"연산 장치: {device}")
    return device
