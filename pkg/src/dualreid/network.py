"""The assembled dual-branch network and its deterministic constructor."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .backbones import FrameCnn, FrameVit, spatial_mean_pool, temporal_mean_pool
from .cca import ContentAttention
from .config import ModelConfig
from .errors import ConfigError
from .hta import TemporalStack
from .losses import HintNetwork


@dataclass
class ForwardOutputs:
    """Every intermediate the objective needs, one tensor per stage."""

    pooled1: Tensor          # (B, T, c1)  pooled conv backbone frames
    pooled2: Tensor          # (B, T, c2)  pooled transformer backbone frames
    fused1: Tensor           # (B, T, c1)  after spatial fusion
    fused2: Tensor           # (B, T, c2)
    refined1: Tensor | None  # (B, T, c1)  after temporal stack (None at depth 0)
    refined2: Tensor | None
    video: Tensor            # (B, c1+c2)  final supervision / teacher feature
    backbone_video: Tensor   # (B, c1+c2)  concat of temporally pooled backbone feats


class DualBranchNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        joint = config.c1 + config.c2
        self.cnn = FrameCnn(config)
        self.vit = FrameVit(config)
        self.cca = ContentAttention(config)
        self.hta = TemporalStack(config)
        # classifiers: frame heads for each branch plus the video head
        self.head_cnn = nn.Linear(config.c1, config.num_classes, bias=False)
        self.head_vit = nn.Linear(config.c2, config.num_classes, bias=False)
        self.head_video = nn.Linear(joint, config.num_classes, bias=False)
        self.hint_cnn = HintNetwork(config.c1, joint)
        self.hint_vit = HintNetwork(config.c2, joint)

    def forward(self, clip: Tensor) -> ForwardOutputs:
        cfg = self.config
        if clip.shape[1] != cfg.frames_t:
            raise ConfigError(
                f"clip has {clip.shape[1]} frames, config expects {cfg.frames_t}"
            )
        maps1 = self.cnn(clip)
        maps2 = self.vit(clip)
        pooled1 = spatial_mean_pool(maps1)
        pooled2 = spatial_mean_pool(maps2)
        backbone_video = torch.cat(
            [temporal_mean_pool(pooled1), temporal_mean_pool(pooled2)], dim=-1
        )
        fused1, fused2 = self.cca(maps1, maps2)
        if cfg.hta_depth > 0:
            refined1, refined2, video = self.hta(fused1, fused2)
        else:
            # coupled baseline: temporally pooled spatial fusion, no stack
            refined1, refined2 = None, None
            video = torch.cat(
                [temporal_mean_pool(fused1), temporal_mean_pool(fused2)], dim=-1
            )
        return ForwardOutputs(
            pooled1=pooled1, pooled2=pooled2, fused1=fused1, fused2=fused2,
            refined1=refined1, refined2=refined2, video=video,
            backbone_video=backbone_video,
        )

    @torch.no_grad()
    def backbone_features(self, clip: Tensor) -> Tensor:
        """Fast-inference path: backbones and pooling only."""
        pooled1 = spatial_mean_pool(self.cnn(clip))
        pooled2 = spatial_mean_pool(self.vit(clip))
        return torch.cat(
            [temporal_mean_pool(pooled1), temporal_mean_pool(pooled2)], dim=-1
        )

    @torch.no_grad()
    def video_features(self, clip: Tensor) -> Tensor:
        """Full retrieval feature (requires a temporal stack)."""
        if self.config.hta_depth < 1:
            raise ConfigError("full-mode features require hta_depth >= 1")
        out = self.forward(clip)
        if self.config.retrieval_feature == "aggregated_plus_frames":
            return torch.cat(
                [out.video,
                 temporal_mean_pool(out.refined1),
                 temporal_mean_pool(out.refined2)],
                dim=-1,
            )
        return out.video

    def parameter_vector(self) -> Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])


def _fan_in(param: Tensor) -> int:
    if param.ndim == 2:  # linear (out, in)
        return param.shape[1]
    if param.ndim == 4:  # conv (out, in, kh, kw)
        return param.shape[1] * param.shape[2] * param.shape[3]
    return param.shape[-1]


def init_parameters(module: nn.Module, seed: int) -> None:
    """Re-initialize every parameter from one seeded generator.

    Weights draw from N(0, 1/fan_in); biases and norm offsets are zero, norm
    scales one.  Identical seeds give bitwise-identical parameters because
    ``named_parameters`` iterates in registration order.
    """
    gen = torch.Generator().manual_seed(seed & 0xFFFF_FFFF_FFFF_FFFF)
    for name, param in module.named_parameters():
        with torch.no_grad():
            if param.ndim >= 2:
                std = _fan_in(param) ** -0.5
                values = torch.empty(
                    param.shape, dtype=torch.float64
                ).normal_(0.0, std, generator=gen)
                param.copy_(values.to(param.dtype))
            elif name.endswith("bias"):
                param.zero_()
            else:  # 1-D norm scales
                param.fill_(1.0)


def build_model(config: ModelConfig, dtype: torch.dtype = torch.float64) -> DualBranchNet:
    """Construct the network with deterministic, seeded parameters.

    Double precision is the default so the finite-difference checks and the
    training runs share one numeric path.
    """
    config.validate()
    net = DualBranchNet(config).to(dtype)
    init_parameters(net, config.seed)
    return net
