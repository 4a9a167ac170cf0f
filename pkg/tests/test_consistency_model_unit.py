"""
일관성 함수 단위 테스트 (Unit Tests)

Feature: pfct-ldct-denoising
테스트 대상: modules/consistency_model.py - ConsistencyFunction, apply, denoise
"""

import numpy as np
import pytest
import torch

from modules.consistency_model import (
    ConsistencyFunction,
    NetworkConfig,
    apply,
    check_parameters,
    denoise,
    denoise_tiled,
)
from modules.self_test import small_consistency_function


@pytest.fixture
def f():
    return small_consistency_function(seed=0)


def _images(shape=(2, 1, 16, 16), seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=gen), torch.randn(shape, generator=gen)


class TestNetworkConfig:

    def test_side_must_divide_by_depth(self):
        cfg = NetworkConfig(depth=3)
        cfg.check_side(64)
        with pytest.raises(ValueError, match="2\\^depth"):
            cfg.check_side(60)

    @pytest.mark.parametrize("kwargs", [{'base_channels': 0}, {'depth': 0}, {'noise_embedding_dim': 15}])
    def test_invalid_config_rejected(self, kwargs):
        with pytest.raises(ValueError):
            NetworkConfig(**kwargs)


class TestBoundaryCondition:
    """σ = σ_min 에서 출력은 입력과 같다"""

    @pytest.mark.parametrize("seed", range(5))
    def test_identity_at_sigma_min_for_random_weights(self, seed):
        f = small_consistency_function(seed)
        x, y = _images(seed=seed)
        with torch.no_grad():
            out = apply(f, x, f.sigma_min, y)
        assert float((out - x).abs().max()) < 1e-5

    def test_skip_coefficient_is_half_at_sigma_data(self, f):
        sigma = torch.tensor([f.sigma_data + f.sigma_min], dtype=torch.float64)
        c_skip, c_out, _ = f.scalings(sigma)
        assert float(c_skip) == pytest.approx(0.5, abs=1e-12)
        assert float(c_out) > 0

    def test_scalings_at_sigma_min(self, f):
        c_skip, c_out, _ = f.scalings(torch.tensor([f.sigma_min], dtype=torch.float64))
        assert float(c_skip) == 1.0
        assert float(c_out) == 0.0


class TestApply:

    def test_output_shape_matches_input(self, f):
        x, y = _images()
        with torch.no_grad():
            assert apply(f, x, 1.0, y).shape == x.shape

    def test_nfe_counts_one_per_call(self, f):
        x, y = _images()
        f.reset_nfe()
        with torch.no_grad():
            apply(f, x, 0.5, y)
            assert f.nfe == 1
            apply(f, x, torch.tensor([0.5, 2.0]), y)
        assert f.nfe == 2

    def test_outputs_finite_over_sigma_range(self, f):
        x, y = _images()
        with torch.no_grad():
            for sigma in (0.002, 0.01, 0.5, 5.0, 80.0):
                assert torch.isfinite(apply(f, x.clamp(-1, 1), sigma, y.clamp(-1, 1))).all()

    def test_shape_mismatch_rejected(self, f):
        x, _ = _images()
        with pytest.raises(ValueError, match="모양"):
            apply(f, x, 1.0, torch.zeros(2, 1, 16, 8))

    def test_sigma_below_minimum_rejected(self, f):
        x, y = _images()
        with pytest.raises(ValueError, match="sigma_min"):
            apply(f, x, 0.001, y)

    def test_non_batched_input_rejected(self, f):
        with pytest.raises(ValueError, match="B, C, H, W"):
            apply(f, torch.zeros(1, 16, 16), 1.0, torch.zeros(1, 16, 16))

    def test_attention_gate_variant(self):
        torch.manual_seed(0)
        gated = ConsistencyFunction(NetworkConfig(base_channels=8, depth=2, noise_embedding_dim=16,
                                                  use_attention_gate=True))
        x, y = _images()
        with torch.no_grad():
            out = apply(gated, x, 1.0, y)
        assert out.shape == x.shape
        assert torch.isfinite(out).all()


class TestDenoise:

    def test_sigma_min_returns_condition(self, f):
        _, y = _images()
        out = denoise(f, y, f.sigma_min, np.random.default_rng(0))
        assert torch.equal(out, y)

    def test_single_network_evaluation(self, f):
        _, y = _images()
        f.reset_nfe()
        out = denoise(f, y, 80.0, np.random.default_rng(0))
        assert f.nfe == 1
        assert out.shape == y.shape

    def test_same_rng_same_output(self, f):
        _, y = _images()
        a = denoise(f, y, 1.0, np.random.default_rng(3))
        b = denoise(f, y, 1.0, np.random.default_rng(3))
        assert torch.equal(a, b)

    def test_indivisible_side_is_padded_then_cropped(self, f):
        y = torch.randn(1, 1, 18, 22)
        f.reset_nfe()
        with torch.no_grad():
            out = denoise_tiled(f, y, 1.0, y)
        assert out.shape == y.shape
        assert f.nfe == 1

    def test_sigma_star_below_minimum_rejected(self, f):
        _, y = _images()
        with pytest.raises(ValueError, match="sigma_star"):
            denoise(f, y, 0.0001, np.random.default_rng(0))

    def test_nan_parameters_reported(self, f):
        with torch.no_grad():
            f.network.stem.weight[0, 0, 0, 0] = float('nan')
        with pytest.raises(ValueError, match="network.stem.weight"):
            check_parameters(f)
        _, y = _images()
        with pytest.raises(ValueError, match="유한하지 않은 파라미터"):
            denoise(f, y, 1.0, np.random.default_rng(0))
