import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualreid.data import generate_synthetic_dataset
from dualreid.errors import ConfigError, EvaluationError, ShapeError
from dualreid.evaluation import FeatureDB, cmc_map, distance_matrix, extract_features
from dualreid.network import build_model

from conftest import tiny_config
from test_data import small_spec


def db(features, ids=None, cams=None, mode="full"):
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    ids = np.asarray(ids if ids is not None else np.zeros(n), dtype=np.int64)
    cams = np.asarray(cams if cams is not None else np.zeros(n), dtype=np.int64)
    return FeatureDB(features, ids, cams, mode)


def cmc_map_oracle(dist, q_ids, g_ids, q_cams, g_cams, max_rank=None):
    """Independent re-derivation: python sort with explicit tie-breaking and a
    running-precision loop."""
    max_rank = dist.shape[1] if max_rank is None else max_rank
    first_ranks, aps, skipped = [], [], 0
    for qi in range(dist.shape[0]):
        entries = []
        for gi in range(dist.shape[1]):
            if g_ids[gi] == q_ids[qi] and g_cams[gi] == q_cams[qi]:
                continue
            entries.append((dist[qi, gi], gi))
        entries.sort()
        hits = [g_ids[gi] == q_ids[qi] for _, gi in entries]
        if not any(hits):
            skipped += 1
            continue
        first_ranks.append(hits.index(True) + 1)
        precisions, seen = [], 0
        for rank, hit in enumerate(hits, start=1):
            if hit:
                seen += 1
                precisions.append(seen / rank)
        aps.append(sum(precisions) / len(precisions))
    if not aps:
        raise EvaluationError("all queries skipped")
    cmc = np.array([sum(1 for r in first_ranks if r <= k) / len(aps)
                    for k in range(1, max_rank + 1)])
    return sum(aps) / len(aps), cmc, len(aps), skipped


class TestDistanceMatrix:
    def test_identical_vectors(self):
        d = distance_matrix(db([[1.0, 2.0]]), db([[1.0, 2.0]]))
        assert d.shape == (1, 1) and d[0, 0] == 0.0

    def test_three_four_five(self):
        d = distance_matrix(db([[0.0, 0.0]]), db([[3.0, 4.0]]))
        assert d[0, 0] == pytest.approx(5.0, abs=1e-12)

    def test_symmetric_for_same_set(self):
        feats = np.random.default_rng(0).normal(size=(5, 3))
        d = distance_matrix(db(feats), db(feats))
        assert np.allclose(d, d.T, atol=1e-12)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            distance_matrix(db([[1.0, 2.0]]), db([[1.0, 2.0, 3.0]]))

    def test_cosine_metric(self):
        d = distance_matrix(db([[1.0, 0.0]]), db([[0.0, 2.0], [3.0, 0.0]]), metric="cosine")
        assert d[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert d[0, 1] == pytest.approx(0.0, abs=1e-12)


class TestCmcMap:
    def test_relevant_at_ranks_one_and_three(self):
        dist = np.array([[0.1, 0.2, 0.3, 0.4]])
        g_ids = np.array([5, 6, 5, 7])
        metrics = cmc_map(dist, np.array([5]), g_ids, np.array([0]),
                          np.array([1, 1, 1, 1]))
        assert metrics.mean_ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-12)
        assert metrics.rank(1) == 1.0

    def test_same_camera_match_is_excluded(self):
        # nearest gallery item shares identity and camera, so it is dropped and
        # the cross-camera match at original rank 2 becomes rank 1
        dist = np.array([[0.1, 0.2, 0.9]])
        g_ids = np.array([3, 3, 4])
        g_cams = np.array([0, 1, 1])
        metrics = cmc_map(dist, np.array([3]), g_ids, np.array([0]), g_cams)
        assert metrics.rank(1) == 1.0
        assert metrics.mean_ap == 1.0

    def test_perfect_single_match_retrieval(self):
        dist = np.array([[0.1, 0.5], [0.6, 0.2]])
        g_ids = np.array([0, 1])
        metrics = cmc_map(dist, np.array([0, 1]), g_ids,
                          np.array([0, 0]), np.array([1, 1]))
        assert metrics.rank(1) == 1.0 and metrics.mean_ap == 1.0

    def test_queries_without_matches_are_skipped(self):
        dist = np.array([[0.1, 0.2], [0.3, 0.4]])
        g_ids = np.array([0, 1])
        metrics = cmc_map(dist, np.array([0, 9]), g_ids,
                          np.array([0, 0]), np.array([1, 1]))
        assert metrics.num_skipped == 1 and metrics.num_queries == 1

    def test_all_skipped_rejected(self):
        dist = np.array([[0.5]])
        with pytest.raises(EvaluationError):
            cmc_map(dist, np.array([1]), np.array([2]), np.array([0]), np.array([0]))

    def test_ties_break_on_gallery_index(self):
        dist = np.array([[0.5, 0.5]])
        g_ids = np.array([9, 1])  # wrong identity sits at the lower index
        metrics = cmc_map(dist, np.array([1]), g_ids, np.array([0]), np.array([1, 1]))
        assert metrics.rank(1) == 0.0 and metrics.rank(2) == 1.0

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        nq, ng = rng.integers(1, 11), rng.integers(2, 51)
        dist = rng.random((nq, ng))
        q_ids = rng.integers(0, 5, nq)
        g_ids = rng.integers(0, 5, ng)
        q_cams = rng.integers(0, 3, nq)
        g_cams = rng.integers(0, 3, ng)
        has_match = [
            bool((((g_ids == q_ids[i]) & ~((g_ids == q_ids[i]) & (g_cams == q_cams[i])))).any())
            for i in range(nq)
        ]
        if not any(has_match):
            return
        got = cmc_map(dist, q_ids, g_ids, q_cams, g_cams)
        want_map, want_cmc, want_n, want_skipped = cmc_map_oracle(
            dist, q_ids, g_ids, q_cams, g_cams)
        assert got.mean_ap == want_map
        assert np.array_equal(got.cmc, want_cmc)
        assert got.num_queries == want_n and got.num_skipped == want_skipped

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_metric_ranges_and_monotone_curve(self, seed):
        rng = np.random.default_rng(seed)
        dist = rng.random((6, 20))
        q_ids = rng.integers(0, 3, 6)
        g_ids = np.concatenate([np.arange(3), rng.integers(0, 3, 17)])
        metrics = cmc_map(dist, q_ids, g_ids, np.zeros(6, np.int64),
                          np.ones(20, np.int64))
        assert 0.0 <= metrics.mean_ap <= 1.0
        assert (np.diff(metrics.cmc) >= 0).all()
        assert metrics.cmc[-1] <= 1.0
        assert metrics.mean_ap <= metrics.cmc[-1] + 1e-12

    def test_rotation_leaves_distances_unchanged(self):
        rng = np.random.default_rng(1)
        q, g = rng.normal(size=(4, 6)), rng.normal(size=(9, 6))
        rotation, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        base = distance_matrix(db(q), db(g))
        turned = distance_matrix(db(q @ rotation), db(g @ rotation))
        assert np.allclose(base, turned, atol=1e-9)

    def test_positive_scaling_leaves_metrics_unchanged(self):
        rng = np.random.default_rng(2)
        q, g = rng.normal(size=(4, 6)), rng.normal(size=(9, 6))
        q_ids, g_ids = rng.integers(0, 3, 4), rng.integers(0, 3, 9)
        cams_q, cams_g = np.zeros(4, np.int64), np.ones(9, np.int64)
        a = cmc_map(distance_matrix(db(q), db(g)), q_ids, g_ids, cams_q, cams_g)
        b = cmc_map(distance_matrix(db(37.0 * q), db(37.0 * g)), q_ids, g_ids, cams_q, cams_g)
        assert a.mean_ap == b.mean_ap
        assert np.array_equal(a.cmc, b.cmc)


class TestExtractFeatures:
    def test_both_modes_emit_branch_sum_width(self, net, config):
        index = generate_synthetic_dataset(small_spec())
        for mode in ("full", "backbone"):
            feats = extract_features(net, index.query, mode)
            assert feats.features.shape == (len(index.query), config.c1 + config.c2)

    def test_extraction_is_deterministic(self, net):
        index = generate_synthetic_dataset(small_spec())
        a = extract_features(net, index.query, "full")
        b = extract_features(net, index.query, "full")
        assert np.array_equal(a.features, b.features)

    def test_backbone_mode_skips_fusion_and_temporal_stages(self, net):
        index = generate_synthetic_dataset(small_spec())
        calls = {"cca": 0, "hta": 0}
        h1 = net.cca.register_forward_hook(lambda *a: calls.__setitem__("cca", calls["cca"] + 1))
        h2 = net.hta.register_forward_hook(lambda *a: calls.__setitem__("hta", calls["hta"] + 1))
        try:
            extract_features(net, index.query, "backbone")
            assert calls == {"cca": 0, "hta": 0}
            extract_features(net, index.query, "full")
            assert calls["cca"] > 0 and calls["hta"] > 0
        finally:
            h1.remove()
            h2.remove()

    def test_full_mode_requires_temporal_stack(self):
        net = build_model(tiny_config(hta_depth=0))
        index = generate_synthetic_dataset(small_spec())
        with pytest.raises(ConfigError, match="hta_depth"):
            extract_features(net, index.query, "full")

    def test_unknown_mode_rejected(self, net):
        index = generate_synthetic_dataset(small_spec())
        with pytest.raises(ConfigError, match="mode"):
            extract_features(net, index.query, "everything")

    def test_concatenated_retrieval_feature_switch(self):
        net = build_model(tiny_config(retrieval_feature="aggregated_plus_frames"))
        index = generate_synthetic_dataset(small_spec())
        feats = extract_features(net, index.query, "full")
        joint = net.config.c1 + net.config.c2
        assert feats.features.shape == (len(index.query), 2 * joint)


class TestFeatureDb:
    def test_misaligned_labels_rejected(self):
        with pytest.raises(ShapeError):
            FeatureDB(np.zeros((3, 2)), np.zeros(2, np.int64), np.zeros(3, np.int64), "full")
