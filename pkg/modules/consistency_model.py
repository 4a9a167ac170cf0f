# modules/consistency_model.py
"""조건부 일관성 함수 f_θ(x_σ, σ, y)

- ConsistencyUNet: (노이즈 영상, σ 임베딩, 조건 영상)을 받는 작은 조건부 U-Net
- ConsistencyFunction: 경계 조건 f_θ(x, σ_min, y) = x 를 구조적으로 보장하는 스킵 파라미터화
    f = c_skip(σ)·x_σ + c_out(σ)·F(c_in(σ)·x_σ, embed(σ), y)
    c_skip = σ_d² / ((σ-σ_min)² + σ_d²),  c_out = σ_d·(σ-σ_min) / √(σ_d² + σ²)
    c_in   = 1 / √(σ² + σ_d²)   (백본 입력 스케일)
- denoise: 저선량 영상 y에서 한 번의 함수 평가(NFE=1)로 복원
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from utils.perturbation_kernel import AugmentedKernelSpec, sample_radius, sample_uniform_angles

logger = logging.getLogger(__name__)


@dataclass
class NetworkConfig:
    """백본 설정 (영상 한 변은 2^depth 로 나누어져야 한다)"""

    base_channels: int = 32
    depth: int = 3
    use_attention_gate: bool = False
    noise_embedding_dim: int = 128
    channels: int = 1

    def __post_init__(self):
        if self.base_channels < 1 or self.depth < 1 or self.noise_embedding_dim < 2 or self.channels < 1:
            raise ValueError(f"NetworkConfig 값은 모두 양수여야 합니다: {self}")
        if self.noise_embedding_dim % 2:
            raise ValueError(f"noise_embedding_dim은 짝수여야 합니다: {self.noise_embedding_dim}")

    def check_side(self, side: int):
        if side % (2 ** self.depth):
            raise ValueError(f"영상 한 변({side})이 2^depth({2 ** self.depth})로 나누어지지 않습니다")


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class SigmaEmbedding(nn.Module):
    """log σ 의 사인 위치 임베딩 → MLP"""

    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, out_dim), nn.SiLU(), nn.Linear(out_dim, out_dim))

    def forward(self, sigma: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=sigma.dtype, device=sigma.device) / half
        )
        # EDM 관례: c_noise = log(σ)/4
        angles = (torch.log(sigma) / 4.0)[:, None] * 1000.0 * freqs[None, :]
        return self.mlp(torch.cat([torch.cos(angles), torch.sin(angles)], dim=1))


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class AttentionGate(nn.Module):
    """가중 어텐션 게이트: 디코더 신호 g로 스킵 특징 x를 화소별로 가중한다"""

    def __init__(self, channels: int):
        super().__init__()
        inter = max(channels // 2, 1)
        self.w_x = nn.Conv2d(channels, inter, 1)
        self.w_g = nn.Conv2d(channels, inter, 1)
        self.psi = nn.Conv2d(inter, 1, 1)

    def forward(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        weight = torch.sigmoid(self.psi(F.relu(self.w_x(x) + self.w_g(g))))
        return x * weight


class ConsistencyUNet(nn.Module):
    """조건 영상 y를 채널로 이어 붙이는 조건부 U-Net 백본"""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        emb_dim = cfg.base_channels * 4
        widths = [cfg.base_channels * min(2 ** level, 4) for level in range(cfg.depth + 1)]

        self.embedding = SigmaEmbedding(cfg.noise_embedding_dim, emb_dim)
        self.stem = nn.Conv2d(2 * cfg.channels, widths[0], 3, padding=1)

        self.encoders = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for level in range(cfg.depth):
            self.encoders.append(ResidualBlock(widths[level], widths[level], emb_dim))
            self.downsamples.append(nn.Conv2d(widths[level], widths[level + 1], 3, stride=2, padding=1))

        self.middle = nn.ModuleList([
            ResidualBlock(widths[-1], widths[-1], emb_dim),
            ResidualBlock(widths[-1], widths[-1], emb_dim),
        ])

        self.upsamples = nn.ModuleList()
        self.gates = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in reversed(range(cfg.depth)):
            self.upsamples.append(nn.Conv2d(widths[level + 1], widths[level], 3, padding=1))
            self.gates.append(AttentionGate(widths[level]) if cfg.use_attention_gate else nn.Identity())
            self.decoders.append(ResidualBlock(2 * widths[level], widths[level], emb_dim))

        self.head = nn.Sequential(
            nn.GroupNorm(_groups(widths[0]), widths[0]),
            nn.SiLU(),
            nn.Conv2d(widths[0], cfg.channels, 3, padding=1),
        )

    def forward(self, x: torch.Tensor, sigma: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        emb = self.embedding(sigma)
        h = self.stem(torch.cat([x, y], dim=1))

        skips = []
        for encoder, down in zip(self.encoders, self.downsamples):
            h = encoder(h, emb)
            skips.append(h)
            h = down(h)

        for block in self.middle:
            h = block(h, emb)

        for up, gate, decoder in zip(self.upsamples, self.gates, self.decoders):
            skip = skips.pop()
            h = up(F.interpolate(h, size=skip.shape[-2:], mode='nearest'))
            gated = gate(skip, h) if self.cfg.use_attention_gate else skip
            h = decoder(torch.cat([gated, h], dim=1), emb)

        return self.head(h)


class ConsistencyFunction(nn.Module):
    """
    경계 조건을 구조적으로 만족하는 일관성 함수

    σ = σ_min 에서 c_skip = 1, c_out = 0 이므로 θ와 무관하게 출력은 입력과 같다.
    nfe는 백본 평가 횟수(호출 1회 = 1)를 센다.
    """

    def __init__(self, network_cfg: NetworkConfig, sigma_min: float = 0.002, sigma_data: float = 0.5):
        super().__init__()
        if not (sigma_min > 0 and sigma_data > 0):
            raise ValueError(f"sigma_min, sigma_data는 양수여야 합니다: {sigma_min}, {sigma_data}")
        self.network_cfg = network_cfg
        self.sigma_min = float(sigma_min)
        self.sigma_data = float(sigma_data)
        self.network = ConsistencyUNet(network_cfg)
        self.nfe = 0

    def reset_nfe(self):
        self.nfe = 0

    def scalings(self, sigma: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(c_skip, c_out, c_in)"""
        sd = self.sigma_data
        shifted = sigma - self.sigma_min
        c_skip = sd ** 2 / (shifted ** 2 + sd ** 2)
        c_out = sd * shifted / torch.sqrt(sd ** 2 + sigma ** 2)
        c_in = 1.0 / torch.sqrt(sigma ** 2 + sd ** 2)
        return c_skip, c_out, c_in

    def forward(self, x_sigma: torch.Tensor, sigma, y: torch.Tensor) -> torch.Tensor:
        if x_sigma.shape != y.shape:
            raise ValueError(f"x_sigma와 y의 모양이 다릅니다: {tuple(x_sigma.shape)} vs {tuple(y.shape)}")
        if x_sigma.dim() != 4:
            raise ValueError(f"입력은 (B, C, H, W) 이어야 합니다: {tuple(x_sigma.shape)}")

        sigma = torch.as_tensor(sigma, dtype=x_sigma.dtype, device=x_sigma.device)
        if sigma.dim() == 0:
            sigma = sigma.expand(x_sigma.shape[0])
        if sigma.shape != (x_sigma.shape[0],):
            raise ValueError(f"σ 모양이 배치와 맞지 않습니다: {tuple(sigma.shape)}")
        if torch.any(sigma < self.sigma_min):
            raise ValueError(f"σ는 sigma_min({self.sigma_min}) 이상이어야 합니다: min={sigma.min().item()}")

        c_skip, c_out, c_in = (c[:, None, None, None] for c in self.scalings(sigma))
        self.nfe += 1
        out = self.network(c_in * x_sigma, sigma, y)
        return c_skip * x_sigma + c_out * out


def apply(f: ConsistencyFunction, x_sigma: torch.Tensor, sigma, y: torch.Tensor) -> torch.Tensor:
    """f_θ(x_σ, σ, y) — 백본 평가 정확히 1회"""
    return f(x_sigma, sigma, y)


def check_parameters(f: ConsistencyFunction):
    """NaN/Inf 파라미터가 있으면 이름을 담아 ValueError"""
    bad = [name for name, p in f.named_parameters() if not torch.isfinite(p).all()]
    if bad:
        raise ValueError(f"유한하지 않은 파라미터가 있습니다 (학습 실패 또는 손상): {', '.join(bad[:5])}")


@torch.no_grad()
def denoise(f: ConsistencyFunction, y: torch.Tensor, sigma_star: float, rng: np.random.Generator,
            aug_dim: int = 2048) -> torch.Tensor:
    """
    단일 단계 복원: x_σ* = y + v·R (R ~ p_r, r = σ*·√D) 를 만들고 f_θ(x_σ*, σ*, y) 를 반환한다.

    σ* = σ_min 이면 섭동 없이 x_σ* = y 이므로 출력은 y와 같다.
    한 변이 2^depth 로 나누어지지 않는 큰 영상은 반사 패딩 후 평가하고 잘라낸다.

    Args:
        f: 학습된 일관성 함수
        y: (B, C, H, W) 저선량 영상
        sigma_star: 추론 노이즈 레벨 (sigma_min 이상)
        rng: 섭동용 난수 스트림
        aug_dim: 증강 차원 D

    Raises:
        ValueError: 유한하지 않은 파라미터, σ* < σ_min
    """
    check_parameters(f)
    if sigma_star < f.sigma_min:
        raise ValueError(f"sigma_star는 sigma_min({f.sigma_min}) 이상이어야 합니다: {sigma_star}")

    if sigma_star == f.sigma_min:
        x_sigma = y
    else:
        batch = y.shape[0]
        dims = int(np.prod(y.shape[1:]))
        angle = sample_uniform_angles(dims, batch, rng)
        radius = sample_radius(AugmentedKernelSpec(dims, aug_dim, sigma_star), batch, rng)
        offset = torch.as_tensor(angle * radius[:, None], dtype=y.dtype, device=y.device)
        x_sigma = y + offset.reshape(y.shape)

    return denoise_tiled(f, x_sigma, sigma_star, y)


def denoise_tiled(f: ConsistencyFunction, x_sigma: torch.Tensor, sigma: float, y: torch.Tensor) -> torch.Tensor:
    """
    512×512 같은 전체 영상 평가. 한 변이 2^depth 로 나누어지지 않으면
    반사 패딩 후 한 번 평가하고 원래 크기로 잘라낸다 (NFE는 항상 1).
    """
    height, width = y.shape[-2:]
    unit = 2 ** f.network_cfg.depth
    pad_h, pad_w = (-height) % unit, (-width) % unit
    if not (pad_h or pad_w):
        return apply(f, x_sigma, sigma, y)

    mode = 'reflect' if pad_h < height and pad_w < width else 'replicate'
    x_in = F.pad(x_sigma, (0, pad_w, 0, pad_h), mode=mode)
    y_in = F.pad(y, (0, pad_w, 0, pad_h), mode=mode)
    return apply(f, x_in, sigma, y_in)[..., :height, :width]
