"""Temporal encoding and aggregation across frames.

One layer = a temporal transformer per branch, an aggregating transformer over
the channel-concatenated sequence (pooled into a single video vector) and a
gated exchange that writes the video vector back into each branch's frame
features.  Layers stack with independent parameters.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .backbones import TokenAttention, temporal_mean_pool
from .config import ModelConfig
from .errors import ConfigError, ShapeError


class TemporalTransformer(nn.Module):
    """Position embedding + bare MHSA + frame-wise feed-forward.

    The feed-forward runs FC -> ReLU -> FC -> LayerNorm on the sum of the
    attention output and its (position-embedded) input; there is no second
    residual around the feed-forward.
    """

    def __init__(self, dim: int, num_heads: int, frames_t: int):
        super().__init__()
        self.pos_embed = nn.Parameter(torch.zeros(1, frames_t, dim))
        self.attn = TokenAttention(dim, num_heads, qkv_bias=False, out_proj=False)
        self.ffn = nn.Sequential(
            nn.Linear(dim, dim),
            nn.ReLU(),
            nn.Linear(dim, dim),
            nn.LayerNorm(dim),
        )

    def forward(self, seq: Tensor, return_weights: bool = False):
        if seq.ndim != 3:
            raise ShapeError(f"expected (B, T, C), got {tuple(seq.shape)}")
        if seq.shape[1] != self.pos_embed.shape[1]:
            raise ShapeError(
                f"sequence length {seq.shape[1]} does not match position embedding "
                f"length {self.pos_embed.shape[1]}"
            )
        x = seq + self.pos_embed
        z, weights = self.attn(x, return_weights=True)
        out = self.ffn(z + x)
        if return_weights:
            return out, weights
        return out


class GatedAttention(nn.Module):
    """Redistribute the aggregated video vector into both branches.

    The video vector is decoupled into per-branch vectors; a sigmoid gate
    (from the product of frame feature and decoupled vector) convexly blends
    the two per channel.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        joint = config.c1 + config.c2
        self.decouple1 = nn.Linear(joint, config.c1, bias=False)
        self.decouple2 = nn.Linear(joint, config.c2, bias=False)
        self.gate1 = nn.Linear(config.c1, config.c1)
        self.gate2 = nn.Linear(config.c2, config.c2)
        self.pin_gates_open = config.ablate_gated_attention

    def gates(self, frame: Tensor, decoupled: Tensor, gate_net: nn.Linear) -> Tensor:
        return torch.sigmoid(gate_net(frame * decoupled.unsqueeze(-2)))

    def forward(self, s1: Tensor, s2: Tensor, video: Tensor,
                return_gates: bool = False):
        if video.shape[-1] != self.decouple1.in_features:
            raise ShapeError(
                f"video feature has dim {video.shape[-1]}, expected "
                f"{self.decouple1.in_features}"
            )
        dec1, dec2 = self.decouple1(video), self.decouple2(video)
        if self.pin_gates_open:
            g1 = torch.ones_like(s1)
            g2 = torch.ones_like(s2)
        else:
            g1 = self.gates(s1, dec1, self.gate1)
            g2 = self.gates(s2, dec2, self.gate2)
        m1 = g1 * s1 + (1.0 - g1) * dec1.unsqueeze(-2)
        m2 = g2 * s2 + (1.0 - g2) * dec2.unsqueeze(-2)
        if return_gates:
            return m1, m2, g1, g2
        return m1, m2


class TemporalLayer(nn.Module):
    """One stack level: two branch transformers, aggregation, gated exchange."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        t, heads = config.frames_t, config.num_heads
        self.branch1 = TemporalTransformer(config.c1, heads, t)
        self.branch2 = TemporalTransformer(config.c2, heads, t)
        self.aggregate = TemporalTransformer(config.c1 + config.c2, heads, t)
        self.exchange = GatedAttention(config)

    def forward(self, f1: Tensor, f2: Tensor):
        if f1.shape[1] != f2.shape[1]:
            raise ShapeError(
                f"branch sequences have different lengths: {f1.shape[1]} vs {f2.shape[1]}"
            )
        s1 = self.branch1(f1)
        s2 = self.branch2(f2)
        joint_seq = self.aggregate(torch.cat([s1, s2], dim=-1))
        video = temporal_mean_pool(joint_seq)
        m1, m2 = self.exchange(s1, s2, video)
        return m1, m2, video


class TemporalStack(nn.Module):
    """``depth`` independent temporal layers; refined sequences feed forward."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(TemporalLayer(config) for _ in range(config.hta_depth))

    def __len__(self) -> int:
        return len(self.layers)

    def forward(self, f1: Tensor, f2: Tensor, depth: int | None = None):
        """Run the first ``depth`` layers (all by default).

        Returns the final refined sequences and the final layer's video vector.
        """
        depth = len(self.layers) if depth is None else depth
        if depth < 1:
            raise ConfigError("temporal stack requires depth >= 1")
        if depth > len(self.layers):
            raise ConfigError(
                f"requested depth {depth} exceeds built depth {len(self.layers)}"
            )
        m1, m2, video = f1, f2, None
        for layer in self.layers[:depth]:
            m1, m2, video = layer(m1, m2)
        return m1, m2, video
