"""Finite-difference verification of analytic gradients.

Each target builds a scalar probe (sum of outputs, or the actual training
objective) on a tiny double-precision model, differentiates it analytically,
and compares against central differences coordinate by coordinate.  For the
objective targets the distillation teacher is frozen at its base value inside
the probe, which makes the teacher-detachment contract itself numerically
checkable: a missing detach shows up as a gradient mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .config import LossConfig, ModelConfig
from .errors import ConfigError
from .losses import class_probabilities
from .network import DualBranchNet, ForwardOutputs, build_model
from .training import compute_losses

TARGETS = ("cca", "hta", "losses", "full")
DEFAULT_EPSILON = 1e-5
DEFAULT_TOLERANCE = 1e-4


def verification_config(seed: int = 0) -> ModelConfig:
    """Smallest config the invariants allow; keeps differencing fast."""
    return ModelConfig(
        frames_t=2, image_h=16, image_w=8, map_h=2, map_w=1,
        c1=8, c2=4, num_heads=2, hta_depth=1, num_classes=3, seed=seed,
    )


@dataclass
class GroupResult:
    max_rel_error: float = 0.0
    worst_tensor: str = ""
    coords: int = 0


@dataclass
class GradCheckReport:
    target: str
    epsilon: float
    groups: dict[str, GroupResult] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max((g.max_rel_error for g in self.groups.values()), default=0.0)

    def ok(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return all(g.max_rel_error <= tolerance for g in self.groups.values())

    def format(self, tolerance: float = DEFAULT_TOLERANCE) -> str:
        lines = [f"gradcheck target={self.target} epsilon={self.epsilon:g}"]
        for name in sorted(self.groups):
            g = self.groups[name]
            status = "ok" if g.max_rel_error <= tolerance else "FAIL"
            lines.append(
                f"  {name:<12} max_rel_err={g.max_rel_error:.3e} "
                f"({g.coords} coords, worst: {g.worst_tensor}) {status}"
            )
        return "\n".join(lines)


def _relative_errors(analytic: torch.Tensor, numeric: torch.Tensor) -> torch.Tensor:
    denom = torch.maximum(
        torch.ones_like(analytic),
        torch.maximum(analytic.abs(), numeric.abs()),
    )
    return (analytic - numeric).abs() / denom


def _central_difference(probe, tensor: torch.Tensor, epsilon: float) -> torch.Tensor:
    grad = torch.zeros_like(tensor, dtype=torch.float64)
    flat, grad_flat = tensor.reshape(-1), grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            origin = flat[i].item()
            flat[i] = origin + epsilon
            up = probe()
            flat[i] = origin - epsilon
            down = probe()
            flat[i] = origin
            grad_flat[i] = (up - down) / (2.0 * epsilon)
    return grad


def _compare(probe_graph, probe_value, named: list[tuple[str, torch.Tensor]],
             epsilon: float, target: str) -> GradCheckReport:
    loss = probe_graph()
    analytic = torch.autograd.grad(
        loss, [t for _, t in named], allow_unused=True, retain_graph=False
    )
    report = GradCheckReport(target=target, epsilon=epsilon)
    for (name, tensor), grad in zip(named, analytic):
        grad = torch.zeros_like(tensor) if grad is None else grad
        numeric = _central_difference(probe_value, tensor, epsilon)
        errors = _relative_errors(grad.double(), numeric)
        group = name.split(".", 1)[0]
        entry = report.groups.setdefault(group, GroupResult())
        worst = errors.max().item()
        if worst >= entry.max_rel_error:
            entry.max_rel_error = worst
            entry.worst_tensor = name
        entry.coords += tensor.numel()
    return report


def _named_params(module: torch.nn.Module, prefix: str) -> list[tuple[str, torch.Tensor]]:
    return [(f"{prefix}.{n}" if prefix else n, p) for n, p in module.named_parameters()]


def _check_cca(net: DualBranchNet, gen: torch.Generator, epsilon: float) -> GradCheckReport:
    cfg = net.config
    x1 = torch.randn(3, cfg.c1, cfg.map_h, cfg.map_w, dtype=torch.float64, generator=gen)
    x2 = torch.randn(3, cfg.c2, cfg.map_h, cfg.map_w, dtype=torch.float64, generator=gen)
    x1.requires_grad_(True)
    x2.requires_grad_(True)

    def probe():
        f1, f2 = net.cca.fuse_frame(x1, x2)
        return f1.sum() + f2.sum()

    named = [("input.x1", x1), ("input.x2", x2)] + _named_params(net.cca, "cca")
    return _compare(probe, lambda: probe().item(), named, epsilon, "cca")


def _check_hta(net: DualBranchNet, gen: torch.Generator, epsilon: float) -> GradCheckReport:
    cfg = net.config
    f1 = torch.randn(2, cfg.frames_t, cfg.c1, dtype=torch.float64, generator=gen)
    f2 = torch.randn(2, cfg.frames_t, cfg.c2, dtype=torch.float64, generator=gen)
    f1.requires_grad_(True)
    f2.requires_grad_(True)

    def probe():
        m1, m2, video = net.hta(f1, f2)
        return m1.sum() + m2.sum() + video.sum()

    named = [("input.f1", f1), ("input.f2", f2)] + _named_params(net.hta, "hta")
    return _compare(probe, lambda: probe().item(), named, epsilon, "hta")


def _loss_heads(net: DualBranchNet) -> list[tuple[str, torch.Tensor]]:
    named = []
    for mod in ("head_cnn", "head_vit", "head_video", "hint_cnn", "hint_vit"):
        named += _named_params(getattr(net, mod), mod)
    return named


def _frozen_teacher(net: DualBranchNet, outputs: ForwardOutputs):
    probs = class_probabilities(outputs.video, net.head_video.weight)
    return probs.detach().clone(), outputs.video.detach().clone()


def _check_losses(net: DualBranchNet, gen: torch.Generator, epsilon: float,
                  loss_cfg: LossConfig) -> GradCheckReport:
    cfg = net.config
    joint = cfg.c1 + cfg.c2
    b, t = 4, cfg.frames_t
    pooled1 = torch.randn(b, t, cfg.c1, dtype=torch.float64, generator=gen)
    pooled2 = torch.randn(b, t, cfg.c2, dtype=torch.float64, generator=gen)
    video = torch.randn(b, joint, dtype=torch.float64, generator=gen)
    backbone_video = torch.randn(b, joint, dtype=torch.float64, generator=gen)
    labels = torch.tensor([0, 0, 1, 1])
    for leaf in (pooled1, pooled2, video, backbone_video):
        leaf.requires_grad_(True)

    def outputs() -> ForwardOutputs:
        return ForwardOutputs(
            pooled1=pooled1, pooled2=pooled2, fused1=pooled1, fused2=pooled2,
            refined1=None, refined2=None, video=video, backbone_video=backbone_video,
        )

    teacher = _frozen_teacher(net, outputs())

    def probe():
        loss, _ = compute_losses(net, outputs(), labels, loss_cfg, teacher_override=teacher)
        return loss

    named = [
        ("input.pooled1", pooled1), ("input.pooled2", pooled2),
        ("input.video", video), ("input.backbone_video", backbone_video),
    ] + _loss_heads(net)
    return _compare(probe, lambda: probe().item(), named, epsilon, "losses")


def _check_full(net: DualBranchNet, gen: torch.Generator, epsilon: float,
                loss_cfg: LossConfig) -> GradCheckReport:
    cfg = net.config
    clips = torch.rand(4, cfg.frames_t, 3, cfg.image_h, cfg.image_w,
                       dtype=torch.float64, generator=gen)
    clips.requires_grad_(True)
    labels = torch.tensor([0, 0, 1, 1])
    with torch.no_grad():
        teacher = _frozen_teacher(net, net(clips))

    def probe():
        loss, _ = compute_losses(net, net(clips), labels, loss_cfg, teacher_override=teacher)
        return loss

    named = [("input.clips", clips)] + _named_params(net, "")
    return _compare(probe, lambda: probe().item(), named, epsilon, "full")


def grad_check(target: str, seed: int = 0, epsilon: float = DEFAULT_EPSILON,
               config: ModelConfig | None = None,
               loss_cfg: LossConfig | None = None) -> GradCheckReport:
    """Verify analytic gradients of one subsystem against central differences."""
    if target not in TARGETS:
        raise ConfigError(f"gradcheck target must be one of {TARGETS}, got {target!r}")
    config = config or verification_config(seed)
    loss_cfg = loss_cfg or LossConfig()
    net = build_model(config)
    gen = torch.Generator().manual_seed(seed + 1)
    if target == "cca":
        return _check_cca(net, gen, epsilon)
    if target == "hta":
        return _check_hta(net, gen, epsilon)
    if target == "losses":
        return _check_losses(net, gen, epsilon, loss_cfg)
    return _check_full(net, gen, epsilon, loss_cfg)
