"""Byte-exact checkpoint serialization.

Layout: magic, format version, header length, a canonical JSON header
(sorted keys), then raw little-endian float64 buffers in header order.
Writing the same state twice produces identical bytes, so save -> load ->
save round trips can be compared with file equality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, model_config_from_dict, model_config_to_dict
from .errors import ConfigError
from .network import DualBranchNet, build_model

MAGIC = b"DREID\x00"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    format_version: int
    config: ModelConfig
    epoch: int
    params: dict[str, torch.Tensor]
    momentum: dict[str, torch.Tensor] = field(default_factory=dict)
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def _tensor_payload(named: list[tuple[str, torch.Tensor]]):
    entries, buffers, offset = [], [], 0
    for name, tensor in named:
        data = tensor.detach().to(torch.float64).contiguous().numpy().astype("<f8")
        raw = data.tobytes()
        entries.append({
            "name": name,
            "shape": list(tensor.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        buffers.append(raw)
        offset += len(raw)
    return entries, b"".join(buffers)


def save_checkpoint(path: str | Path, net: DualBranchNet, epoch: int,
                    optimizer: torch.optim.Optimizer | None = None,
                    rng_state: dict | None = None,
                    extra: dict | None = None) -> None:
    named = [(f"param.{name}", p) for name, p in net.named_parameters()]
    if optimizer is not None:
        name_of = {id(p): name for name, p in net.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                buf = optimizer.state.get(p, {}).get("momentum_buffer")
                if buf is not None:
                    named.append((f"momentum.{name_of[id(p)]}", buf))
    entries, payload = _tensor_payload(named)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model_config_to_dict(net.config),
        "epoch": epoch,
        "tensors": entries,
        "rng": rng_state,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ConfigError(f"not a checkpoint file: {path}")
    version = int.from_bytes(raw[6:10], "little")
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format version {version}")
    header_len = int.from_bytes(raw[10:18], "little")
    header = json.loads(raw[18:18 + header_len].decode("utf-8"))
    payload = raw[18 + header_len:]

    params: dict[str, torch.Tensor] = {}
    momentum: dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        data = np.frombuffer(
            payload, dtype="<f8", count=entry["nbytes"] // 8, offset=entry["offset"]
        ).reshape(entry["shape"])
        tensor = torch.from_numpy(data.copy())
        kind, name = entry["name"].split(".", 1)
        (params if kind == "param" else momentum)[name] = tensor
    return Checkpoint(
        format_version=header["format_version"],
        config=model_config_from_dict(header["model_config"]),
        epoch=header["epoch"],
        params=params,
        momentum=momentum,
        rng_state=header.get("rng"),
        extra=header.get("extra", {}),
    )


def restore_model(ckpt: Checkpoint) -> DualBranchNet:
    net = build_model(ckpt.config)
    state = dict(net.named_parameters())
    if set(state) != set(ckpt.params):
        missing = set(state) ^ set(ckpt.params)
        raise ConfigError(f"checkpoint parameters do not match the model: {sorted(missing)}")
    with torch.no_grad():
        for name, p in state.items():
            p.copy_(ckpt.params[name])
    return net


def restore_momentum(optimizer: torch.optim.Optimizer, net: DualBranchNet,
                     ckpt: Checkpoint) -> None:
    by_name = dict(net.named_parameters())
    for name, buf in ckpt.momentum.items():
        optimizer.state[by_name[name]] = {"momentum_buffer": buf.clone()}
