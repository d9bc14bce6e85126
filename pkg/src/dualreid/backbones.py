"""Per-frame feature extractors and the two pooling primitives.

Both backbones map a clip ``(B, T, 3, image_h, image_w)`` to per-frame spatial
grids ``(B, T, C, map_h, map_w)``.  Frames never mix inside a backbone: every
normalization acts per sample, so output map ``t`` depends on input frame ``t``
only.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .config import ModelConfig
from .errors import ShapeError


def _group_count(channels: int) -> int:
    return math.gcd(8, channels)


class FrameCnn(nn.Module):
    """Small conv branch: one stride-2 stage per halving of the resolution.

    At the default downsample factor of 8 this is three conv/GroupNorm/ReLU
    stages with widths (c1/4, c1/2, c1) followed by a 1x1 projection to c1.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        stages = int(math.log2(config.downsample))
        widths = [max(2, config.c1 >> (stages - 1 - i)) for i in range(stages)]
        blocks = []
        in_ch = 3
        for width in widths:
            blocks += [
                nn.Conv2d(in_ch, width, kernel_size=3, stride=2, padding=1),
                nn.GroupNorm(_group_count(width), width),
                nn.ReLU(),
            ]
            in_ch = width
        self.stages = nn.Sequential(*blocks)
        self.proj = nn.Conv2d(in_ch, config.c1, kernel_size=1)

    def forward(self, clip: Tensor) -> Tensor:
        b, t = _check_clip(clip, self.config)
        x = clip.reshape(b * t, *clip.shape[2:])
        x = self.proj(self.stages(x))
        return x.reshape(b, t, self.config.c1, self.config.map_h, self.config.map_w)


class TokenAttention(nn.Module):
    """Multi-head self-attention over a token sequence.

    ``out_proj=False`` follows the bare formulation used by the temporal
    layers: per-head softmax(QK^T / sqrt(d)) V, heads concatenated and
    returned as-is.
    """

    def __init__(self, dim: int, num_heads: int, qkv_bias: bool = False,
                 out_proj: bool = False):
        super().__init__()
        if dim % num_heads != 0:
            raise ShapeError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.query = nn.Linear(dim, dim, bias=qkv_bias)
        self.key = nn.Linear(dim, dim, bias=qkv_bias)
        self.value = nn.Linear(dim, dim, bias=qkv_bias)
        self.out = nn.Linear(dim, dim) if out_proj else None

    def forward(self, x: Tensor, return_weights: bool = False):
        b, n, c = x.shape
        heads = self.num_heads

        def split(t: Tensor) -> Tensor:
            return t.reshape(b, n, heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        if self.out is not None:
            out = self.out(out)
        if return_weights:
            return out, attn  # (B, heads, N, N)
        return out


class EncoderBlock(nn.Module):
    """Pre-norm transformer encoder block (standard ViT layout)."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = TokenAttention(dim, num_heads, qkv_bias=True, out_proj=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class FrameVit(nn.Module):
    """Small transformer branch: non-overlapping patch embedding, learnable
    2-D position embedding, two pre-norm encoder layers, no class token.

    Tokens are laid back onto the ``map_h x map_w`` grid in row-major patch
    order.
    """

    def __init__(self, config: ModelConfig, depth: int = 2):
        super().__init__()
        self.config = config
        patch = config.downsample
        self.patch_embed = nn.Conv2d(3, config.c2, kernel_size=patch, stride=patch)
        self.pos_embed = nn.Parameter(
            torch.zeros(1, config.map_h * config.map_w, config.c2)
        )
        self.blocks = nn.Sequential(
            *[EncoderBlock(config.c2, config.num_heads) for _ in range(depth)]
        )
        self.norm = nn.LayerNorm(config.c2)

    def forward(self, clip: Tensor) -> Tensor:
        b, t = _check_clip(clip, self.config)
        cfg = self.config
        x = self.patch_embed(clip.reshape(b * t, *clip.shape[2:]))  # (BT, c2, mh, mw)
        x = x.flatten(2).transpose(1, 2)  # (BT, mh*mw, c2) row-major
        x = self.norm(self.blocks(x + self.pos_embed))
        x = x.transpose(1, 2).reshape(b * t, cfg.c2, cfg.map_h, cfg.map_w)
        return x.reshape(b, t, cfg.c2, cfg.map_h, cfg.map_w)


def _check_clip(clip: Tensor, config: ModelConfig) -> tuple[int, int]:
    if clip.ndim != 5 or clip.shape[2] != 3:
        raise ShapeError(f"expected clip of shape (B, T, 3, H, W), got {tuple(clip.shape)}")
    if clip.shape[3] != config.image_h or clip.shape[4] != config.image_w:
        raise ShapeError(
            f"clip frames are {clip.shape[3]}x{clip.shape[4]}, "
            f"config expects {config.image_h}x{config.image_w}"
        )
    return clip.shape[0], clip.shape[1]


def _ordered_mean(values: Tensor, dim: int) -> Tensor:
    # summing in sorted-value order makes the mean bitwise permutation-invariant
    return values.sort(dim=dim).values.sum(dim=dim) / values.shape[dim]


def spatial_mean_pool(maps: Tensor) -> Tensor:
    """Channel-wise mean over the spatial grid: (..., C, H, W) -> (..., C).

    Exactly invariant to any permutation of the grid cells.
    """
    if maps.ndim < 3:
        raise ShapeError(f"expected (..., C, H, W), got {tuple(maps.shape)}")
    return _ordered_mean(maps.flatten(-2), dim=-1)


def temporal_mean_pool(vectors: Tensor) -> Tensor:
    """Element-wise mean over the frame axis: (..., T, C) -> (..., C).

    Exactly invariant to any permutation of the frames.
    """
    if vectors.ndim < 2:
        raise ShapeError(f"expected (..., T, C), got {tuple(vectors.shape)}")
    if vectors.shape[-2] == 0:
        raise ValueError("cannot pool an empty frame sequence")
    return _ordered_mean(vectors, dim=-2)
