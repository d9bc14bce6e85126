"""Dataclass configs and the INI-style config file reader.

All run-time knobs live here so that experiments are describable by a single
flat key/value file with ``[model]``, ``[loss]``, ``[optimizer]`` and
``[train]`` sections.  Unknown sections or keys are rejected rather than
silently ignored.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

FUSE_ACTIVATIONS = ("none", "relu")
KL_DIRECTIONS = ("student_teacher", "teacher_student")
FRAME_CE_REDUCTIONS = ("mean", "sum")
RETRIEVAL_FEATURES = ("aggregated", "aggregated_plus_frames")


@dataclass(frozen=True)
class ModelConfig:
    """Structural description of the dual-branch network.

    ``c1``/``c2`` are the channel widths of the conv and transformer branches,
    ``map_h``/``map_w`` the spatial feature grid each backbone emits, and
    ``hta_depth`` the number of stacked temporal-aggregation layers (0 keeps
    the plain coupled baseline).
    """

    frames_t: int = 4
    image_h: int = 64
    image_w: int = 32
    map_h: int = 8
    map_w: int = 4
    c1: int = 128
    c2: int = 64
    num_heads: int = 4
    hta_depth: int = 2
    num_classes: int = 10
    seed: int = 0
    # structural switches (ablations and recorded defaults)
    ablate_self_attention: bool = False
    ablate_cross_attention: bool = False
    ablate_gated_attention: bool = False
    fuse_activation: str = "none"
    retrieval_feature: str = "aggregated"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.frames_t < 2:
            raise ConfigError(f"frames_t must be >= 2, got {self.frames_t}")
        if self.map_h < 1 or self.map_w < 1 or self.map_h * self.map_w < 2:
            raise ConfigError(
                f"feature grid must have >= 2 cells, got {self.map_h}x{self.map_w}"
            )
        if self.num_heads < 1:
            raise ConfigError(f"num_heads must be positive, got {self.num_heads}")
        for name, width in (("c1", self.c1), ("c2", self.c2)):
            if width % self.num_heads != 0:
                raise ConfigError(
                    f"{name}={width} is not divisible by num_heads={self.num_heads}"
                )
            if width % 2 != 0:
                raise ConfigError(f"{name}={width} must be even (paired value projections)")
        if (self.c1 + self.c2) % self.num_heads != 0:
            raise ConfigError(
                f"c1+c2={self.c1 + self.c2} is not divisible by num_heads={self.num_heads}"
            )
        if self.image_h % self.map_h != 0 or self.image_w % self.map_w != 0:
            raise ConfigError(
                f"image {self.image_h}x{self.image_w} does not tile into map "
                f"{self.map_h}x{self.map_w}"
            )
        fh, fw = self.image_h // self.map_h, self.image_w // self.map_w
        if fh != fw:
            raise ConfigError(f"downsample factors differ: {fh} (h) vs {fw} (w)")
        if fh < 2 or fh & (fh - 1) != 0:
            raise ConfigError(
                f"downsample factor must be a power of two >= 2 (stride-2 plan), got {fh}"
            )
        if self.hta_depth < 0:
            raise ConfigError(f"hta_depth must be >= 0, got {self.hta_depth}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive, got {self.num_classes}")
        if self.fuse_activation not in FUSE_ACTIVATIONS:
            raise ConfigError(f"fuse_activation must be one of {FUSE_ACTIVATIONS}")
        if self.retrieval_feature not in RETRIEVAL_FEATURES:
            raise ConfigError(f"retrieval_feature must be one of {RETRIEVAL_FEATURES}")

    @property
    def downsample(self) -> int:
        return self.image_h // self.map_h


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four objective terms."""

    ce: float = 1.0
    triplet: float = 1.0
    logistic: float = 0.1
    feature: float = 0.1

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be >= 0")


@dataclass(frozen=True)
class LossConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    triplet_margin: float = 0.3
    label_smoothing: float = 0.0
    kl_direction: str = "student_teacher"
    frame_ce_reduction: str = "mean"

    def __post_init__(self) -> None:
        if self.triplet_margin < 0:
            raise ConfigError("triplet_margin must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if self.kl_direction not in KL_DIRECTIONS:
            raise ConfigError(f"kl_direction must be one of {KL_DIRECTIONS}")
        if self.frame_ce_reduction not in FRAME_CE_REDUCTIONS:
            raise ConfigError(f"frame_ce_reduction must be one of {FRAME_CE_REDUCTIONS}")


@dataclass(frozen=True)
class OptimizerSchedule:
    """SGD schedule: step decay by ``decay_factor`` every ``decay_every`` epochs."""

    base_lr: float = 1e-3
    weight_decay: float = 5e-4
    momentum: float = 0.9
    nesterov: bool = True
    decay_factor: float = 10.0
    decay_every: int = 15
    max_epochs: int = 50

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.decay_factor <= 1:
            raise ConfigError("decay_factor must be > 1")
        if self.decay_every < 1:
            raise ConfigError("decay_every must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.base_lr / self.decay_factor ** (epoch // self.decay_every)


@dataclass(frozen=True)
class BatchSpec:
    """PK batch layout: ``p`` identities, ``k`` tracklets per identity."""

    p: int = 8
    k: int = 2

    def __post_init__(self) -> None:
        if self.p < 2:
            raise ConfigError("p (identities per batch) must be >= 2")
        if self.k < 2:
            raise ConfigError("k (tracklets per identity) must be >= 2")

    @property
    def batch_size(self) -> int:
        return self.p * self.k


@dataclass(frozen=True)
class TrainConfig:
    """Run-level knobs that are neither model structure nor loss weights."""

    batch: BatchSpec = field(default_factory=BatchSpec)
    eval_every: int = 5
    augment_flip: bool = False
    augment_crop: bool = False
    augment_erase: bool = False

    def __post_init__(self) -> None:
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    loss: LossConfig
    schedule: OptimizerSchedule
    train: TrainConfig


def _parse_value(raw: str, target_type: type, key: str):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"key '{key}': cannot parse {raw!r} as {target_type.__name__}") from exc


def _section_to_dataclass(parser: configparser.ConfigParser, section: str, cls):
    """Build a (possibly nested-default) dataclass from one INI section."""
    allowed = {f.name: f for f in fields(cls) if f.type not in ("LossWeights", "BatchSpec")}
    # flattened nested fields
    nested: dict[str, tuple[str, type]] = {}
    if cls is LossConfig:
        for f in fields(LossWeights):
            nested[f"lambda_{f.name}"] = ("weights", float)
    if cls is TrainConfig:
        nested["p"] = ("batch", int)
        nested["k"] = ("batch", int)

    kwargs = {}
    nested_kwargs: dict[str, dict] = {}
    for key, raw in parser.items(section):
        if key in nested:
            owner, typ = nested[key]
            name = key.removeprefix("lambda_") if owner == "weights" else key
            nested_kwargs.setdefault(owner, {})[name] = _parse_value(raw, typ, key)
        elif key in allowed:
            f = allowed[key]
            typ = {"int": int, "float": float, "bool": bool, "str": str}[f.type]
            kwargs[key] = _parse_value(raw, typ, key)
        else:
            raise ConfigError(f"unknown key '{key}' in section [{section}]")
    if cls is LossConfig and "weights" in nested_kwargs:
        kwargs["weights"] = LossWeights(**nested_kwargs["weights"])
    if cls is TrainConfig and "batch" in nested_kwargs:
        kwargs["batch"] = BatchSpec(**nested_kwargs["batch"])
    return cls(**kwargs)


_SECTIONS = {
    "model": ModelConfig,
    "loss": LossConfig,
    "optimizer": OptimizerSchedule,
    "train": TrainConfig,
}


def load_run_config(path: str | Path) -> RunConfig:
    """Read a run configuration file.

    Only a ``[model]`` section is required; the other sections fall back to
    their defaults.  Unknown sections or keys raise :class:`ConfigError`.
    """
    path = Path(path)
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}] in {path}")
    if not parser.has_section("model"):
        raise ConfigError(f"config file {path} is missing the [model] section")

    parts = {}
    for section, cls in _SECTIONS.items():
        if parser.has_section(section):
            parts[section] = _section_to_dataclass(parser, section, cls)
        else:
            parts[section] = cls()
    return RunConfig(
        model=parts["model"],
        loss=parts["loss"],
        schedule=parts["optimizer"],
        train=parts["train"],
    )


def load_model_config(path: str | Path) -> ModelConfig:
    return load_run_config(path).model


def model_config_to_dict(config: ModelConfig) -> dict:
    return dataclasses.asdict(config)


def model_config_from_dict(payload: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    return ModelConfig(**payload)
