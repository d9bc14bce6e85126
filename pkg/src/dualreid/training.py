"""Training loop: two supervision stages, distillation, schedule, checkpoints.

The objective combines cross-entropy and batch-hard triplet at the backbone
stage (frame classifiers, pooled backbone features) and at the final stage
(video classifier, aggregated feature), plus the two distillation terms whose
teacher is the aggregated feature itself, detached.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, restore_model, restore_momentum, save_checkpoint
from .config import LossConfig, RunConfig
from .data import DatasetIndex, collate, pk_epoch_batches
from .errors import ConfigError, DivergenceError
from .evaluation import evaluate_index
from .losses import (
    LossReport,
    batch_hard_triplet,
    class_probabilities,
    cross_entropy,
    feature_distillation,
    logistic_distillation,
    make_report,
    total_loss,
)
from .network import DualBranchNet, ForwardOutputs, build_model


def compute_losses(net: DualBranchNet, outputs: ForwardOutputs, labels: torch.Tensor,
                   loss_cfg: LossConfig,
                   teacher_override: tuple[torch.Tensor, torch.Tensor] | None = None,
                   ) -> tuple[torch.Tensor, LossReport]:
    """Assemble the weighted objective for one batch.

    ``teacher_override`` replaces the distillation teacher (probabilities,
    video feature) with fixed tensors; the verification harness uses it to
    hold the teacher at its base point while differencing.
    """
    w = loss_cfg.weights
    frames_t = outputs.pooled1.shape[1]
    frame_scale = float(frames_t) if loss_cfg.frame_ce_reduction == "sum" else 1.0

    probs1 = class_probabilities(outputs.pooled1, net.head_cnn.weight)
    probs2 = class_probabilities(outputs.pooled2, net.head_vit.weight)
    probs3 = class_probabilities(outputs.video, net.head_video.weight)

    ce_cnn = cross_entropy(probs1, labels, loss_cfg.label_smoothing) * frame_scale
    ce_vit = cross_entropy(probs2, labels, loss_cfg.label_smoothing) * frame_scale
    ce_backbone = 0.5 * (ce_cnn + ce_vit)
    ce_final = cross_entropy(probs3, labels, loss_cfg.label_smoothing)
    ce = ce_backbone + ce_final

    triplet_backbone = batch_hard_triplet(
        outputs.backbone_video, labels, loss_cfg.triplet_margin
    )
    triplet_final = batch_hard_triplet(outputs.video, labels, loss_cfg.triplet_margin)
    triplet = triplet_backbone + triplet_final

    zero = torch.zeros((), dtype=outputs.video.dtype)
    if teacher_override is not None:
        teacher_probs, teacher_video = teacher_override
    else:
        teacher_probs, teacher_video = probs3, outputs.video
    logistic = (
        logistic_distillation(probs1, probs2, teacher_probs, loss_cfg.kl_direction)
        if w.logistic > 0 else zero
    )
    feature = (
        feature_distillation(outputs.pooled1, outputs.pooled2, teacher_video,
                             net.hint_cnn, net.hint_vit)
        if w.feature > 0 else zero
    )

    loss = total_loss(ce, triplet, logistic, feature, w)
    report = make_report(
        ce.item(), triplet.item(), logistic.item(), feature.item(), w,
        ce_backbone=ce_backbone.item(), ce_final=ce_final.item(),
        triplet_backbone=triplet_backbone.item(), triplet_final=triplet_final.item(),
    )
    return loss, report


class MetricLog:
    """Append-only newline-delimited JSON records with a monotone step index."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self._last_step = -1
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, record: dict) -> None:
        if record.get("kind") == "train_step":
            if record["step"] <= self._last_step:
                raise ValueError(
                    f"step index must increase: {record['step']} after {self._last_step}"
                )
            self._last_step = record["step"]
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def train_records(self) -> list[dict]:
        return [r for r in self.records if r.get("kind") == "train_step"]

    def eval_records(self) -> list[dict]:
        return [r for r in self.records if r.get("kind") == "eval"]

    @staticmethod
    def read(path: str | Path) -> "MetricLog":
        log = MetricLog()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                log.records.append(json.loads(line))
        return log


@dataclass
class TrainResult:
    net: DualBranchNet
    checkpoint_path: Path
    log: MetricLog


def _check_finite(report: LossReport, step: int) -> None:
    for name in ("ce", "triplet", "logistic", "feature", "total"):
        if not math.isfinite(getattr(report, name)):
            raise DivergenceError(f"non-finite loss term '{name}' at step {step}")


def train(run: RunConfig, index: DatasetIndex, out_dir: str | Path,
          epochs: int | None = None, resume: str | Path | None = None,
          evaluate: bool = True) -> TrainResult:
    """Run (or resume) a training job; returns the final checkpoint and log.

    Every epoch ends with a checkpoint carrying the optimizer state and the
    sampler's generator state, so a resumed run replays the unbroken run's
    batch sequence and loss curve exactly.
    """
    model_cfg, schedule, train_cfg = run.model, run.schedule, run.train
    epochs = schedule.max_epochs if epochs is None else epochs
    if index.num_identities != model_cfg.num_classes:
        raise ConfigError(
            f"dataset has {index.num_identities} identities but the model expects "
            f"{model_cfg.num_classes} classes"
        )
    if not index.train:
        raise ConfigError("dataset has no train split")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    net = build_model(model_cfg)
    optimizer = torch.optim.SGD(
        net.parameters(), lr=schedule.base_lr, momentum=schedule.momentum,
        weight_decay=schedule.weight_decay, nesterov=schedule.nesterov,
    )
    data_rng = np.random.default_rng(model_cfg.seed)
    start_epoch, step = 0, 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config != model_cfg:
            raise ConfigError("resume checkpoint was built from a different model config")
        net = restore_model(ckpt)
        optimizer = torch.optim.SGD(
            net.parameters(), lr=schedule.base_lr, momentum=schedule.momentum,
            weight_decay=schedule.weight_decay, nesterov=schedule.nesterov,
        )
        restore_momentum(optimizer, net, ckpt)
        data_rng.bit_generator.state = ckpt.rng_state["numpy"]
        start_epoch = ckpt.epoch + 1
        step = ckpt.extra["step"]
        if start_epoch >= epochs:
            raise ConfigError(
                f"checkpoint already covers epoch {ckpt.epoch}; nothing left of "
                f"the requested {epochs} epochs"
            )

    log = MetricLog(out_dir / "metrics.ndjson")
    augment = train_cfg.augment_flip or train_cfg.augment_crop or train_cfg.augment_erase
    checkpoint_path = out_dir / "last.ckpt"
    for epoch in range(start_epoch, epochs):
        lr = schedule.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        batches = pk_epoch_batches(index.train, train_cfg.batch, model_cfg.frames_t, data_rng)
        for batch in batches:
            clips, labels, _ = collate(
                batch, rng=data_rng if augment else None,
                flip=train_cfg.augment_flip, crop=train_cfg.augment_crop,
                erase=train_cfg.augment_erase,
            )
            outputs = net(clips)
            loss, report = compute_losses(net, outputs, labels, run.loss)
            _check_finite(report, step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            log.append({"kind": "train_step", "step": step, "epoch": epoch,
                        "lr": lr, **report.as_record()})
            step += 1
        is_last = epoch == epochs - 1
        if evaluate and index.query and index.gallery and (
                (epoch + 1) % train_cfg.eval_every == 0 or is_last):
            mode = "full" if model_cfg.hta_depth > 0 else "backbone"
            metrics = evaluate_index(net, index, mode)
            log.append({"kind": "eval", "epoch": epoch, "mode": mode,
                        **metrics.as_record()})
        rng_state = {"numpy": data_rng.bit_generator.state}
        save_checkpoint(out_dir / f"epoch_{epoch:03d}.ckpt", net, epoch,
                        optimizer=optimizer, rng_state=rng_state,
                        extra={"step": step})
        save_checkpoint(checkpoint_path, net, epoch, optimizer=optimizer,
                        rng_state=rng_state, extra={"step": step})
    return TrainResult(net=net, checkpoint_path=checkpoint_path, log=log)
