import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dualreid.backbones import spatial_mean_pool, temporal_mean_pool
from dualreid.config import ModelConfig
from dualreid.errors import ShapeError
from dualreid.network import build_model

from conftest import rand_clip, tiny_config


class TestShapes:
    def test_default_config_map_shapes(self):
        cfg = ModelConfig(frames_t=4)
        net = build_model(cfg)
        clip = rand_clip(cfg, batch=1)
        maps1 = net.cnn(clip)
        maps2 = net.vit(clip)
        # 64x32 through the three stride-2 stages lands on the 8x4 grid
        assert maps1.shape == (1, 4, 128, 8, 4)
        assert maps2.shape == (1, 4, 64, 8, 4)

    def test_patch_count_matches_grid(self):
        cfg = tiny_config()
        net = build_model(cfg)
        # 16x8 image with 8x8 patches -> 2 tokens -> 2x1 grid
        tokens = net.vit.patch_embed(torch.zeros(1, 3, 16, 8, dtype=torch.float64))
        assert tokens.shape == (1, cfg.c2, 2, 1)

    def test_two_frames_give_two_maps(self, net, config):
        maps = net.cnn(rand_clip(config))
        assert maps.shape[1] == 2

    def test_wrong_image_size_rejected(self, net, config):
        bad = torch.zeros(1, config.frames_t, 3, 8, 8, dtype=torch.float64)
        with pytest.raises(ShapeError):
            net.cnn(bad)
        with pytest.raises(ShapeError):
            net.vit(bad)

    @settings(max_examples=10, deadline=None)
    @given(
        map_h=st.integers(1, 3), map_w=st.integers(1, 3),
        c1=st.sampled_from([4, 8, 16]), c2=st.sampled_from([4, 8]),
        frames_t=st.integers(2, 3),
    )
    def test_random_config_sweep(self, map_h, map_w, c1, c2, frames_t):
        if map_h * map_w < 2:
            map_w = 2
        cfg = ModelConfig(
            frames_t=frames_t, image_h=8 * map_h, image_w=8 * map_w,
            map_h=map_h, map_w=map_w, c1=c1, c2=c2, num_heads=2,
            hta_depth=0, num_classes=3, seed=1,
        )
        net = build_model(cfg)
        clip = rand_clip(cfg, batch=1, seed=2)
        assert net.cnn(clip).shape == (1, frames_t, c1, map_h, map_w)
        assert net.vit(clip).shape == (1, frames_t, c2, map_h, map_w)


class TestFrameLocality:
    def test_cnn_is_frame_local(self, net, config):
        a = rand_clip(config, seed=1)
        b = a.clone()
        b[:, 1] = torch.rand_like(b[:, 1])
        out_a, out_b = net.cnn(a), net.cnn(b)
        assert torch.equal(out_a[:, 0], out_b[:, 0])
        assert not torch.equal(out_a[:, 1], out_b[:, 1])

    def test_vit_is_frame_local(self, net, config):
        a = rand_clip(config, seed=3)
        b = a.clone()
        b[:, 0] = torch.rand_like(b[:, 0])
        out_a, out_b = net.vit(a), net.vit(b)
        assert torch.equal(out_a[:, 1], out_b[:, 1])

    def test_frame_permutation_permutes_maps(self):
        cfg = tiny_config(frames_t=3)
        net = build_model(cfg)
        clip = rand_clip(cfg, seed=4)
        perm = torch.tensor([2, 0, 1])
        assert torch.equal(net.cnn(clip[:, perm]), net.cnn(clip)[:, perm])

    def test_duplicate_frames_give_identical_maps(self, net, config):
        clip = rand_clip(config, seed=5)
        clip[:, 1] = clip[:, 0]
        maps = net.vit(clip)
        assert torch.equal(maps[:, 0], maps[:, 1])


class TestZeroInput:
    def test_bias_free_cnn_maps_zero_to_zero(self, net, config):
        with torch.no_grad():
            for name, p in net.cnn.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
        maps = net.cnn(torch.zeros(1, config.frames_t, 3, 16, 8, dtype=torch.float64))
        assert torch.equal(maps, torch.zeros_like(maps))


class TestDeterminism:
    def test_forward_is_bitwise_reproducible(self, net, config):
        clip = rand_clip(config, seed=6)
        assert torch.equal(net.cnn(clip), net.cnn(clip))
        assert torch.equal(net.vit(clip), net.vit(clip))

    def test_same_seed_same_parameters(self, config):
        a = build_model(config).parameter_vector()
        b = build_model(config).parameter_vector()
        assert torch.equal(a, b)

    def test_different_seed_different_parameters(self, config):
        a = build_model(config).parameter_vector()
        b = build_model(tiny_config(seed=1)).parameter_vector()
        assert not torch.equal(a, b)


class TestSpatialMeanPool:
    def test_constant_map_pools_to_constant(self):
        maps = torch.full((2, 3, 4, 5), 2.5, dtype=torch.float64)
        assert torch.equal(spatial_mean_pool(maps), torch.full((2, 3), 2.5, dtype=torch.float64))

    def test_single_cell_is_identity(self):
        maps = torch.randn(3, 6, 1, 1, dtype=torch.float64)
        assert torch.equal(spatial_mean_pool(maps), maps[..., 0, 0])

    def test_two_by_two_mean(self):
        maps = torch.tensor([1.0, 2.0, 3.0, 4.0], dtype=torch.float64).reshape(1, 1, 2, 2)
        assert spatial_mean_pool(maps).item() == 2.5

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_commutes_with_spatial_permutation(self, seed):
        gen = torch.Generator().manual_seed(seed)
        maps = torch.randn(2, 3, 2, 3, dtype=torch.float64, generator=gen)
        flat = maps.reshape(2, 3, 6)
        perm = torch.randperm(6, generator=gen)
        shuffled = flat[..., perm].reshape(2, 3, 2, 3)
        assert torch.equal(spatial_mean_pool(maps), spatial_mean_pool(shuffled))


class TestTemporalMeanPool:
    def test_single_frame_is_identity(self):
        seq = torch.randn(2, 1, 5, dtype=torch.float64)
        assert torch.equal(temporal_mean_pool(seq), seq[:, 0])

    def test_opposite_frames_cancel(self):
        v = torch.randn(1, 1, 5, dtype=torch.float64)
        seq = torch.cat([v, -v], dim=1)
        assert torch.equal(temporal_mean_pool(seq), torch.zeros(1, 5, dtype=torch.float64))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), frames=st.integers(1, 6))
    def test_permutation_invariant(self, seed, frames):
        gen = torch.Generator().manual_seed(seed)
        seq = torch.randn(2, frames, 4, dtype=torch.float64, generator=gen)
        perm = torch.randperm(frames, generator=gen)
        assert torch.equal(temporal_mean_pool(seq), temporal_mean_pool(seq[:, perm]))

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            temporal_mean_pool(torch.zeros(2, 0, 4, dtype=torch.float64))
