import numpy as np
import pytest
import torch

from dualreid.checkpoint import (
    FORMAT_VERSION,
    load_checkpoint,
    restore_model,
    restore_momentum,
    save_checkpoint,
)
from dualreid.errors import ConfigError
from conftest import rand_clip


def _trained_step(net):
    opt = torch.optim.SGD(net.parameters(), lr=1e-3, momentum=0.9, nesterov=True)
    out = net(rand_clip(net.config, seed=1))
    out.video.sum().backward()
    opt.step()
    return opt


class TestRoundTrip:
    def test_save_load_save_is_byte_identical(self, net, tmp_path):
        opt = _trained_step(net)
        rng_state = {"numpy": np.random.default_rng(3).bit_generator.state}
        first = tmp_path / "a.ckpt"
        save_checkpoint(first, net, epoch=4, optimizer=opt, rng_state=rng_state,
                        extra={"step": 9})
        ckpt = load_checkpoint(first)
        restored = restore_model(ckpt)
        opt2 = torch.optim.SGD(restored.parameters(), lr=1e-3, momentum=0.9, nesterov=True)
        restore_momentum(opt2, restored, ckpt)
        second = tmp_path / "b.ckpt"
        save_checkpoint(second, restored, epoch=ckpt.epoch, optimizer=opt2,
                        rng_state=ckpt.rng_state, extra=ckpt.extra)
        assert first.read_bytes() == second.read_bytes()

    def test_parameters_round_trip_bitwise(self, net, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, net, epoch=0)
        restored = restore_model(load_checkpoint(path))
        assert torch.equal(net.parameter_vector(), restored.parameter_vector())

    def test_header_fields(self, net, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, net, epoch=7, extra={"step": 21})
        ckpt = load_checkpoint(path)
        assert ckpt.format_version == FORMAT_VERSION
        assert ckpt.epoch == 7
        assert ckpt.extra == {"step": 21}
        assert ckpt.config == net.config

    def test_momentum_buffers_round_trip(self, net, tmp_path):
        opt = _trained_step(net)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, net, epoch=0, optimizer=opt)
        ckpt = load_checkpoint(path)
        name_of = {id(p): n for n, p in net.named_parameters()}
        for group in opt.param_groups:
            for p in group["params"]:
                buf = opt.state.get(p, {}).get("momentum_buffer")
                if buf is not None:
                    assert torch.equal(ckpt.momentum[name_of[id(p)]], buf)

    def test_non_checkpoint_file_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(ConfigError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_config_mismatch_rejected(self, net, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, net, epoch=0)
        ckpt = load_checkpoint(path)
        ckpt.params.pop("head_cnn.weight")
        with pytest.raises(ConfigError, match="head_cnn.weight"):
            restore_model(ckpt)
