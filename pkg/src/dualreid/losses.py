"""The four objective terms and their weighted combination.

The distillation terms treat the aggregated video representation as a fixed
teacher: both detach their teacher argument, so no gradient ever reaches the
parameters that produced it through these terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .config import LossWeights
from .errors import ConfigError, ShapeError


@dataclass
class LossReport:
    """Scalar values of one optimization step, with the stage breakdown."""

    ce: float
    triplet: float
    logistic: float
    feature: float
    total: float
    ce_backbone: float = 0.0
    ce_final: float = 0.0
    triplet_backbone: float = 0.0
    triplet_final: float = 0.0

    def as_record(self) -> dict:
        return {
            "ce": self.ce,
            "triplet": self.triplet,
            "logistic": self.logistic,
            "feature": self.feature,
            "total": self.total,
        }


def class_probabilities(features: Tensor, weight: Tensor) -> Tensor:
    """Softmax of ``features @ weight.T``; weight is (num_classes, C)."""
    if features.shape[-1] != weight.shape[-1]:
        raise ShapeError(
            f"feature dim {features.shape[-1]} does not match classifier dim "
            f"{weight.shape[-1]}"
        )
    return torch.softmax(features @ weight.transpose(0, 1), dim=-1)


def cross_entropy(probs: Tensor, labels: Tensor, label_smoothing: float = 0.0) -> Tensor:
    """Mean negative log-probability of the true class.

    ``probs`` has shape (..., num_classes) and ``labels`` broadcasts over the
    leading dimensions.
    """
    num_classes = probs.shape[-1]
    if labels.numel() == 0 or labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(
            f"label out of range [0, {num_classes}): {labels.min() if labels.numel() else '-'}"
        )
    if labels.shape != probs.shape[:-1]:
        labels = labels.unsqueeze(-1).expand(probs.shape[:-1])  # share labels across frames
    log_probs = torch.log(probs)
    nll = -log_probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    if label_smoothing > 0.0:
        uniform = -log_probs.mean(dim=-1)
        nll = (1.0 - label_smoothing) * nll + label_smoothing * uniform
    return nll.mean()


def pairwise_distances(features: Tensor) -> Tensor:
    """Euclidean distance matrix of a batch (N, D) -> (N, N).

    The tiny floor keeps sqrt differentiable at coincident points (the
    diagonal); it perturbs distances by at most 1e-12.
    """
    diff = features.unsqueeze(1) - features.unsqueeze(0)
    return diff.pow(2).sum(-1).clamp_min(1e-24).sqrt()


def batch_hard_triplet(features: Tensor, labels: Tensor, margin: float = 0.3) -> Tensor:
    """Mean over anchors of max(0, hardest positive - hardest negative + margin).

    Requires every anchor to have at least one positive (another sample of the
    same identity) and one negative in the batch.
    """
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"expected (N, D) features aligned with (N,) labels, got "
            f"{tuple(features.shape)} / {tuple(labels.shape)}"
        )
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    pos_mask = same & ~torch.eye(len(labels), dtype=torch.bool, device=labels.device)
    neg_mask = ~same
    if not bool(pos_mask.any(dim=1).all()):
        raise ValueError("degenerate batch: an identity has a single sample")
    if not bool(neg_mask.any(dim=1).all()):
        raise ValueError("degenerate batch: a single identity only")
    dist = pairwise_distances(features)
    hardest_pos = dist.masked_fill(~pos_mask, float("-inf")).max(dim=1).values
    hardest_neg = dist.masked_fill(~neg_mask, float("inf")).min(dim=1).values
    return torch.relu(hardest_pos - hardest_neg + margin).mean()


def _kl(p: Tensor, q: Tensor) -> Tensor:
    return (p * (torch.log(p) - torch.log(q))).sum(dim=-1)


def logistic_distillation(p1_frames: Tensor, p2_frames: Tensor, p3: Tensor,
                          direction: str = "student_teacher") -> Tensor:
    """KL between per-frame class probabilities and the video-level teacher.

    Summed over frames and both branches, averaged over the batch.  The
    teacher ``p3`` is detached, so only the frame-level (student) side
    receives gradient.
    """
    if p1_frames.shape[-1] != p3.shape[-1] or p2_frames.shape[-1] != p3.shape[-1]:
        raise ShapeError(
            f"class counts differ: {p1_frames.shape[-1]}/{p2_frames.shape[-1]} vs "
            f"teacher {p3.shape[-1]}"
        )
    teacher = p3.detach().unsqueeze(-2)  # (B, 1, I)
    if direction == "student_teacher":
        per_frame = _kl(p1_frames, teacher) + _kl(p2_frames, teacher)
    elif direction == "teacher_student":
        per_frame = _kl(teacher, p1_frames) + _kl(teacher, p2_frames)
    else:
        raise ConfigError(f"unknown kl_direction {direction!r}")
    return per_frame.sum(dim=-1).mean()


class HintNetwork(nn.Module):
    """Bottleneck projection aligning a branch's channel count to the teacher's.

    The default width is half the teacher dim; a much narrower bottleneck
    chokes the alignment and drags the student features instead.
    """

    def __init__(self, in_dim: int, out_dim: int, bottleneck: int | None = None):
        super().__init__()
        bottleneck = bottleneck or max(4, out_dim // 2)
        self.down = nn.Linear(in_dim, bottleneck)
        self.relu = nn.ReLU()
        self.up = nn.Linear(bottleneck, out_dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.up(self.relu(self.down(x)))


def feature_distillation(x1_frames: Tensor, x2_frames: Tensor, video: Tensor,
                         hint1: HintNetwork, hint2: HintNetwork) -> Tensor:
    """Squared distance between hinted frame features and the video feature.

    Summed over frames and branches, averaged over the batch; the video
    feature is detached.
    """
    teacher = video.detach().unsqueeze(-2)  # (B, 1, C)
    h1, h2 = hint1(x1_frames), hint2(x2_frames)
    if h1.shape[-1] != teacher.shape[-1] or h2.shape[-1] != teacher.shape[-1]:
        raise ShapeError(
            f"hint outputs {h1.shape[-1]}/{h2.shape[-1]} do not match teacher dim "
            f"{teacher.shape[-1]}"
        )
    per_frame = (h1 - teacher).pow(2).sum(dim=-1) + (h2 - teacher).pow(2).sum(dim=-1)
    return per_frame.sum(dim=-1).mean()


def total_loss(ce: Tensor, triplet: Tensor, logistic: Tensor, feature: Tensor,
               weights: LossWeights) -> Tensor:
    return (weights.ce * ce + weights.triplet * triplet
            + weights.logistic * logistic + weights.feature * feature)


def make_report(ce: float, triplet: float, logistic: float, feature: float,
                weights: LossWeights, *, ce_backbone: float = 0.0,
                ce_final: float = 0.0, triplet_backbone: float = 0.0,
                triplet_final: float = 0.0) -> LossReport:
    """Assemble the per-step record; the total is the weighted component sum."""
    total = (weights.ce * ce + weights.triplet * triplet
             + weights.logistic * logistic + weights.feature * feature)
    return LossReport(
        ce=ce, triplet=triplet, logistic=logistic, feature=feature, total=total,
        ce_backbone=ce_backbone, ce_final=ce_final,
        triplet_backbone=triplet_backbone, triplet_final=triplet_final,
    )
