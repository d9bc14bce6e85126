import numpy as np
import pytest
import torch

from dualreid.config import ModelConfig
from dualreid.network import build_model


def tiny_config(seed: int = 0, **overrides) -> ModelConfig:
    """Verification-scale config: smallest grid/widths the invariants allow."""
    base = dict(
        frames_t=2, image_h=16, image_w=8, map_h=2, map_w=1,
        c1=8, c2=4, num_heads=2, hta_depth=1, num_classes=4, seed=seed,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def net(config):
    return build_model(config)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def rand_clip(config: ModelConfig, batch: int = 2, seed: int = 0) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(batch, config.frames_t, 3, config.image_h, config.image_w,
                      dtype=torch.float64, generator=gen)
