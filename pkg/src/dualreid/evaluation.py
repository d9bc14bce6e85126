"""Retrieval evaluation: feature extraction, distances, CMC and mAP.

Evaluation is camera-aware: gallery entries sharing both identity and camera
with the query are excluded before ranking, and ranking ties break on the
ascending gallery index so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .data import DatasetIndex, Tracklet, collate, rrs_midpoints
from .errors import ConfigError, EvaluationError, ShapeError
from .network import DualBranchNet

MODES = ("full", "backbone")
REPORT_RANKS = (1, 5, 10, 20)


@dataclass
class FeatureDB:
    features: np.ndarray    # (N, D) float64
    identities: np.ndarray  # (N,) int64
    cameras: np.ndarray     # (N,) int64
    mode: str

    def __post_init__(self) -> None:
        n = self.features.shape[0]
        if self.identities.shape != (n,) or self.cameras.shape != (n,):
            raise ShapeError("feature/label counts are misaligned")

    def __len__(self) -> int:
        return len(self.features)


@dataclass
class RetrievalMetrics:
    mean_ap: float
    cmc: np.ndarray  # cmc[k] = CMC at rank k+1
    num_queries: int
    num_skipped: int

    def rank(self, k: int) -> float:
        if k < 1:
            raise ValueError("rank is 1-based")
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def as_record(self) -> dict:
        return {
            "map": self.mean_ap,
            "cmc": {f"rank{k}": self.rank(k) for k in REPORT_RANKS},
            "num_queries": self.num_queries,
            "num_skipped": self.num_skipped,
        }

    def text_report(self) -> str:
        lines = [f"queries evaluated: {self.num_queries} (skipped: {self.num_skipped})",
                 f"mAP: {self.mean_ap:.4f}"]
        lines += [f"CMC rank-{k}: {self.rank(k):.4f}" for k in REPORT_RANKS]
        return "\n".join(lines)


def _eval_clip(tracklet: Tracklet, frames_t: int):
    return tracklet, rrs_midpoints(tracklet.length, frames_t)


def extract_features(net: DualBranchNet, tracklets: list[Tracklet], mode: str,
                     batch_size: int = 32) -> FeatureDB:
    """Embed tracklets with deterministic mid-chunk frame sampling.

    ``full`` uses the aggregated video feature; ``backbone`` uses only the
    pooled backbone features and never touches the fusion or temporal stages.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "full" and net.config.hta_depth < 1:
        raise ConfigError("mode=full requires a model with hta_depth >= 1")
    cfg: ModelConfig = net.config
    feats = []
    was_training = net.training
    net.eval()
    try:
        for start in range(0, len(tracklets), batch_size):
            chunk = tracklets[start:start + batch_size]
            clips, _, _ = collate([_eval_clip(t, cfg.frames_t) for t in chunk])
            if mode == "full":
                feats.append(net.video_features(clips).numpy())
            else:
                feats.append(net.backbone_features(clips).numpy())
    finally:
        net.train(was_training)
    return FeatureDB(
        features=np.concatenate(feats, axis=0) if feats else np.zeros((0, 1)),
        identities=np.array([t.identity for t in tracklets], dtype=np.int64),
        cameras=np.array([t.camera for t in tracklets], dtype=np.int64),
        mode=mode,
    )


def distance_matrix(query: FeatureDB, gallery: FeatureDB,
                    metric: str = "euclidean") -> np.ndarray:
    if query.features.shape[1] != gallery.features.shape[1]:
        raise ShapeError(
            f"feature dims differ: {query.features.shape[1]} vs "
            f"{gallery.features.shape[1]}"
        )
    q, g = query.features, gallery.features
    if metric == "euclidean":
        return np.linalg.norm(q[:, None, :] - g[None, :, :], axis=-1)
    if metric == "cosine":
        qn = q / np.linalg.norm(q, axis=1, keepdims=True)
        gn = g / np.linalg.norm(g, axis=1, keepdims=True)
        return 1.0 - qn @ gn.T
    raise ConfigError(f"unknown distance metric {metric!r}")


def cmc_map(dist: np.ndarray, query_ids: np.ndarray, gallery_ids: np.ndarray,
            query_cams: np.ndarray, gallery_cams: np.ndarray,
            max_rank: int | None = None) -> RetrievalMetrics:
    """Camera-aware CMC curve and mean average precision.

    Per query the same-identity same-camera gallery entries are dropped, the
    rest are ranked by ascending distance (ties by gallery index), average
    precision is the mean of precision at each relevant rank, and CMC(k)
    counts queries whose first match lands within rank k.  Queries without any
    cross-camera match are skipped and tallied.
    """
    nq, ng = dist.shape
    if (query_ids.shape != (nq,) or query_cams.shape != (nq,)
            or gallery_ids.shape != (ng,) or gallery_cams.shape != (ng,)):
        raise ShapeError("label arrays do not align with the distance matrix")
    if max_rank is None:
        max_rank = ng
    first_match_ranks: list[int] = []
    average_precisions: list[float] = []
    skipped = 0
    for qi in range(nq):
        keep = ~((gallery_ids == query_ids[qi]) & (gallery_cams == query_cams[qi]))
        relevant = gallery_ids == query_ids[qi]
        if not bool((relevant & keep).any()):
            skipped += 1
            continue
        kept_idx = np.flatnonzero(keep)
        order = kept_idx[np.argsort(dist[qi, kept_idx], kind="stable")]
        hits = relevant[order]
        first_match_ranks.append(int(np.flatnonzero(hits)[0]) + 1)
        precisions = []
        seen = 0
        for rank0, hit in enumerate(hits):
            if hit:
                seen += 1
                precisions.append(seen / (rank0 + 1))
        average_precisions.append(sum(precisions) / len(precisions))
    if not average_precisions:
        raise EvaluationError("every query was skipped (no valid cross-camera match)")
    ranks = np.array(first_match_ranks)
    cmc = np.array([(ranks <= k).mean() for k in range(1, max_rank + 1)])
    return RetrievalMetrics(
        mean_ap=sum(average_precisions) / len(average_precisions),
        cmc=cmc,
        num_queries=len(average_precisions),
        num_skipped=skipped,
    )


def evaluate_index(net: DualBranchNet, index: DatasetIndex, mode: str,
                   metric: str = "euclidean") -> RetrievalMetrics:
    """extract -> distances -> metrics on the index's query/gallery splits."""
    if not index.query or not index.gallery:
        raise EvaluationError("dataset has no query/gallery split to evaluate")
    query = extract_features(net, index.query, mode)
    gallery = extract_features(net, index.gallery, mode)
    dist = distance_matrix(query, gallery, metric=metric)
    return cmc_map(dist, query.identities, gallery.identities,
                   query.cameras, gallery.cameras)
