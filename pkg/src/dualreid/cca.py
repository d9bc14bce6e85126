"""Spatial fusion of the two branches via content attention.

Each branch owns a self head (its own pooled vector queries its local grid)
and a cross head (the other branch's pooled vector queries the grid).  The two
attentive summaries are concatenated, residual-added with the pooled vector
and mixed by a fully-connected layer.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .backbones import spatial_mean_pool
from .config import ModelConfig
from .errors import ShapeError


class AttentionHead(nn.Module):
    """Softmax over grid positions of <key_proj(local_pos), query_proj(query)>.

    The two projections are not shared and map into a common width so that
    cross-branch queries of a different channel count are well-typed.  No
    logit scaling is applied here.
    """

    def __init__(self, query_dim: int, key_dim: int, attn_dim: int):
        super().__init__()
        self.query_proj = nn.Linear(query_dim, attn_dim, bias=False)
        self.key_proj = nn.Linear(key_dim, attn_dim, bias=False)

    def logits(self, local: Tensor, query: Tensor) -> Tensor:
        if local.ndim != 4:
            raise ShapeError(f"expected local map (B, C, H, W), got {tuple(local.shape)}")
        if query.ndim != 2 or query.shape[0] != local.shape[0]:
            raise ShapeError(
                f"query {tuple(query.shape)} does not align with local {tuple(local.shape)}"
            )
        b, c, h, w = local.shape
        keys = self.key_proj(local.flatten(2).transpose(1, 2))  # (B, HW, d)
        q = self.query_proj(query)  # (B, d)
        return torch.einsum("bpd,bd->bp", keys, q).reshape(b, h, w)

    def forward(self, local: Tensor, query: Tensor) -> Tensor:
        b, _, h, w = local.shape
        weights = torch.softmax(self.logits(local, query).reshape(b, -1), dim=-1)
        return weights.reshape(b, h, w)


def uniform_attention(local: Tensor) -> Tensor:
    """Degenerate map assigning 1/(H*W) everywhere (ablation substitute)."""
    b, _, h, w = local.shape
    return torch.full((b, h, w), 1.0 / (h * w), dtype=local.dtype, device=local.device)


class BranchFusion(nn.Module):
    """One branch's value projections and fusing layer."""

    def __init__(self, channels: int, config: ModelConfig):
        super().__init__()
        self.channels = channels
        self.value_self = nn.Linear(channels, channels // 2, bias=False)
        self.value_cross = nn.Linear(channels, channels // 2, bias=False)
        self.fuse = nn.Linear(channels, channels)
        self.norm = nn.LayerNorm(channels)
        self.activation = nn.ReLU() if config.fuse_activation == "relu" else nn.Identity()

    def forward(self, local: Tensor, a_self: Tensor, a_cross: Tensor,
                pooled: Tensor) -> Tensor:
        b, c, h, w = local.shape
        if a_self.shape != (b, h, w) or a_cross.shape != (b, h, w):
            raise ShapeError(
                f"attention maps {tuple(a_self.shape)}/{tuple(a_cross.shape)} do not "
                f"cover the {h}x{w} grid"
            )
        flat = local.flatten(2).transpose(1, 2)  # (B, HW, C)
        attn_self = torch.einsum("bp,bpc->bc", a_self.reshape(b, -1), self.value_self(flat))
        attn_cross = torch.einsum("bp,bpc->bc", a_cross.reshape(b, -1), self.value_cross(flat))
        mixed = torch.cat([attn_self, attn_cross], dim=-1) + pooled
        return self.activation(self.norm(self.fuse(mixed)))


class ContentAttention(nn.Module):
    """Per-frame fusion of the conv grid ``x1`` and the transformer grid ``x2``.

    Ablation flags replace the self or cross maps with uniform attention while
    keeping every shape fixed.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        attn_dim = min(config.c1, config.c2)
        self.self_head1 = AttentionHead(config.c1, config.c1, attn_dim)
        self.cross_head1 = AttentionHead(config.c2, config.c1, attn_dim)
        self.self_head2 = AttentionHead(config.c2, config.c2, attn_dim)
        self.cross_head2 = AttentionHead(config.c1, config.c2, attn_dim)
        self.fusion1 = BranchFusion(config.c1, config)
        self.fusion2 = BranchFusion(config.c2, config)

    def attention_maps(self, x1: Tensor, x2: Tensor,
                       pooled1: Tensor, pooled2: Tensor) -> dict[str, Tensor]:
        cfg = self.config
        if cfg.ablate_self_attention:
            a_s1, a_s2 = uniform_attention(x1), uniform_attention(x2)
        else:
            a_s1 = self.self_head1(x1, pooled1)
            a_s2 = self.self_head2(x2, pooled2)
        if cfg.ablate_cross_attention:
            a_c1, a_c2 = uniform_attention(x1), uniform_attention(x2)
        else:
            a_c1 = self.cross_head1(x1, pooled2)
            a_c2 = self.cross_head2(x2, pooled1)
        return {"self1": a_s1, "cross1": a_c1, "self2": a_s2, "cross2": a_c2}

    def fuse_frame(self, x1: Tensor, x2: Tensor) -> tuple[Tensor, Tensor]:
        if x1.shape[-2:] != x2.shape[-2:]:
            raise ShapeError(
                f"branch grids differ: {tuple(x1.shape[-2:])} vs {tuple(x2.shape[-2:])}"
            )
        pooled1, pooled2 = spatial_mean_pool(x1), spatial_mean_pool(x2)
        maps = self.attention_maps(x1, x2, pooled1, pooled2)
        f1 = self.fusion1(x1, maps["self1"], maps["cross1"], pooled1)
        f2 = self.fusion2(x2, maps["self2"], maps["cross2"], pooled2)
        return f1, f2

    def forward(self, maps1: Tensor, maps2: Tensor) -> tuple[Tensor, Tensor]:
        """Fuse per-frame grids (B, T, C, H, W) into frame vectors (B, T, C)."""
        if maps1.ndim != 5 or maps2.ndim != 5:
            raise ShapeError("expected per-frame grids of shape (B, T, C, H, W)")
        b, t = maps1.shape[:2]
        f1, f2 = self.fuse_frame(
            maps1.reshape(b * t, *maps1.shape[2:]),
            maps2.reshape(b * t, *maps2.shape[2:]),
        )
        return f1.reshape(b, t, -1), f2.reshape(b, t, -1)
