"""Dual-branch video person re-identification at desk scale.

A small CNN and a small vision transformer encode each frame; their grids are
fused per frame by content attention, aggregated over time by stacked
temporal transformers with a gated exchange, and the aggregated video feature
self-distills into the backbones.  Ships with a synthetic benchmark,
camera-aware retrieval metrics and a finite-difference gradient harness.
"""

from .config import (
    BatchSpec,
    LossConfig,
    LossWeights,
    ModelConfig,
    OptimizerSchedule,
    RunConfig,
    TrainConfig,
    load_model_config,
    load_run_config,
)
from .network import DualBranchNet, build_model

__all__ = [
    "BatchSpec",
    "DualBranchNet",
    "LossConfig",
    "LossWeights",
    "ModelConfig",
    "OptimizerSchedule",
    "RunConfig",
    "TrainConfig",
    "build_model",
    "load_model_config",
    "load_run_config",
]

__version__ = "0.1.0"
