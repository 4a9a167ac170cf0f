"""공용 테스트 설정: slow 마커와 축소 실행 설정"""

import pytest

from configs.run_setting import DataConfig, RunConfig
from modules.consistency_model import NetworkConfig
from utils.phantom_generator import PhantomConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 데스크 스케일 전체 학습 (pytest -m slow 로 실행)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("-m"):
        return
    skip_slow = pytest.mark.skip(reason="slow 테스트는 -m slow 로 실행")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_tiny_config(**overrides) -> RunConfig:
    """16×16 팬텀, 작은 U-Net으로 몇 단계만 도는 실행 설정"""
    values = dict(
        K=4,
        batch_size=4,
        seed=1,
        checkpoint_interval=2,
        eval_interval=2,
        keep_checkpoints=10,
        prefetch=2,
        network=NetworkConfig(base_channels=8, depth=2, noise_embedding_dim=16),
        phantom=PhantomConfig(side=16, train_size=8, val_size=2, test_size=2),
        data=DataConfig(crop_size=16, val_limit=2),
    )
    values.update(overrides)
    return RunConfig(**values)


@pytest.fixture
def tiny_config():
    return make_tiny_config
