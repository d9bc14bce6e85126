"""Synthetic tracklet generation, on-disk datasets, and batch sampling.

Frames are stored as uint8 rasters so that generate -> write -> load round
trips bit-exactly.  The generator is a pure function of its spec: identity
appearance, camera tint and per-frame noise/jitter all derive from one seeded
generator consumed in a fixed order.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import BatchSpec
from .errors import ConfigError, IngestionError

SPLITS = ("train", "query", "gallery")
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = 1


@dataclass(frozen=True)
class SyntheticSpec:
    num_identities: int = 10
    num_cameras: int = 2
    tracklets_per_identity_per_camera: int = 2
    tracklet_length: int = 8
    image_h: int = 64
    image_w: int = 32
    noise_sigma: float = 0.02
    jitter_px: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_identities < 2:
            raise ConfigError("need at least 2 identities")
        if self.num_cameras < 2:
            raise ConfigError("need at least 2 cameras")
        if self.tracklets_per_identity_per_camera < 1:
            raise ConfigError("need at least 1 tracklet per identity per camera")
        if self.tracklet_length < 1:
            raise ConfigError("tracklet_length must be >= 1")
        if not 0.0 <= self.noise_sigma < 1.0:
            raise ConfigError("noise_sigma must lie in [0, 1)")
        if self.jitter_px < 0:
            raise ConfigError("jitter_px must be >= 0")
        if self.image_h < 8 or self.image_w < 8:
            raise ConfigError("images must be at least 8x8")


@dataclass
class Tracklet:
    frames: np.ndarray  # (L, H, W, 3) uint8
    identity: int
    camera: int
    tracklet_id: int

    def __post_init__(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ConfigError(f"tracklet frames must be (L, H, W, 3), got {self.frames.shape}")
        if self.frames.dtype != np.uint8:
            raise ConfigError("tracklet frames must be uint8")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def frames_float(self) -> np.ndarray:
        return self.frames.astype(np.float64) / 255.0


@dataclass
class DatasetIndex:
    train: list[Tracklet]
    query: list[Tracklet]
    gallery: list[Tracklet]
    image_h: int
    image_w: int
    num_identities: int

    def __post_init__(self) -> None:
        self.validate()

    def split(self, name: str) -> list[Tracklet]:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_tracklets(self) -> list[Tracklet]:
        return [*self.train, *self.query, *self.gallery]

    def validate(self) -> None:
        ids = sorted({t.identity for t in self.all_tracklets()})
        if ids != list(range(self.num_identities)):
            raise ConfigError(
                f"identity ids must be dense in [0, {self.num_identities}), got {ids}"
            )
        query_ids = {t.identity for t in self.query}
        gallery_ids = {t.identity for t in self.gallery}
        if not query_ids <= gallery_ids:
            raise ConfigError(
                f"query identities {sorted(query_ids - gallery_ids)} missing from gallery"
            )
        q_keys = {t.tracklet_id for t in self.query}
        g_keys = {t.tracklet_id for t in self.gallery}
        if q_keys & g_keys:
            raise ConfigError("query and gallery share tracklets")

    def train_by_identity(self) -> dict[int, list[Tracklet]]:
        grouped: dict[int, list[Tracklet]] = {}
        for t in self.train:
            grouped.setdefault(t.identity, []).append(t)
        return grouped


def _identity_base(spec: SyntheticSpec, palette: np.ndarray, stripe: np.ndarray,
                   stripe_col: int) -> np.ndarray:
    """Four horizontal color bands plus one vertical stripe."""
    h, w = spec.image_h, spec.image_w
    base = np.empty((h, w, 3), dtype=np.float64)
    edges = [round(i * h / 4) for i in range(5)]
    for band in range(4):
        base[edges[band]:edges[band + 1]] = palette[band]
    stripe_w = max(2, w // 8)
    base[:, stripe_col:stripe_col + stripe_w] = stripe
    return base


def generate_synthetic_dataset(spec: SyntheticSpec) -> DatasetIndex:
    """Build a toy cross-camera retrieval problem.

    Per identity: tracklet 0 of camera 0 becomes the query, tracklet 0 of
    every other camera goes to the gallery, and the remainder trains.  With
    one tracklet per identity and camera the train split is empty.
    """
    rng = np.random.default_rng(spec.seed)
    n_id, n_cam = spec.num_identities, spec.num_cameras
    palettes = rng.uniform(0.1, 0.9, size=(n_id, 4, 3))
    stripes = rng.uniform(0.1, 0.9, size=(n_id, 3))
    stripe_w = max(2, spec.image_w // 8)
    stripe_cols = rng.integers(0, spec.image_w - stripe_w + 1, size=n_id)
    cam_gain = rng.uniform(0.9, 1.1, size=(n_cam, 3))
    cam_shift = rng.uniform(-0.04, 0.04, size=(n_cam, 3))

    splits: dict[str, list[Tracklet]] = {name: [] for name in SPLITS}
    tracklet_id = 0
    for ident in range(n_id):
        base = _identity_base(spec, palettes[ident], stripes[ident], int(stripe_cols[ident]))
        for cam in range(n_cam):
            tinted = base * cam_gain[cam] + cam_shift[cam]
            for k in range(spec.tracklets_per_identity_per_camera):
                frames = np.empty(
                    (spec.tracklet_length, spec.image_h, spec.image_w, 3), dtype=np.uint8
                )
                for f in range(spec.tracklet_length):
                    img = tinted
                    if spec.jitter_px > 0:
                        dy, dx = rng.integers(-spec.jitter_px, spec.jitter_px + 1, size=2)
                        img = np.roll(img, (int(dy), int(dx)), axis=(0, 1))
                    if spec.noise_sigma > 0:
                        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
                    frames[f] = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
                tracklet = Tracklet(frames, ident, cam, tracklet_id)
                tracklet_id += 1
                if k == 0 and cam == 0:
                    splits["query"].append(tracklet)
                elif k == 0:
                    splits["gallery"].append(tracklet)
                else:
                    splits["train"].append(tracklet)
    return DatasetIndex(
        train=splits["train"], query=splits["query"], gallery=splits["gallery"],
        image_h=spec.image_h, image_w=spec.image_w, num_identities=n_id,
    )


# ---------------------------------------------------------------------------
# frame sampling


def rrs_sample(length: int, frames_t: int, rng: np.random.Generator) -> np.ndarray:
    """Restricted random sampling: one index per contiguous chunk.

    The tracklet is divided into ``frames_t`` chunks with floor boundaries and
    one frame drawn per chunk, so indices are strictly increasing whenever
    ``length >= frames_t``.  Shorter tracklets are extended cyclically.
    """
    if length < 1:
        raise ValueError("tracklet length must be >= 1")
    if length < frames_t:
        return np.arange(frames_t) % length
    bounds = [(k * length) // frames_t for k in range(frames_t + 1)]
    return np.array(
        [rng.integers(bounds[k], bounds[k + 1]) for k in range(frames_t)], dtype=np.int64
    )


def rrs_midpoints(length: int, frames_t: int) -> np.ndarray:
    """Deterministic test-time variant: the middle frame of each chunk."""
    if length < 1:
        raise ValueError("tracklet length must be >= 1")
    if length < frames_t:
        return np.arange(frames_t) % length
    bounds = [(k * length) // frames_t for k in range(frames_t + 1)]
    return np.array(
        [(bounds[k] + bounds[k + 1] - 1) // 2 for k in range(frames_t)], dtype=np.int64
    )


Sample = tuple[Tracklet, np.ndarray]


def pk_epoch_batches(tracklets: list[Tracklet], spec: BatchSpec, frames_t: int,
                     rng: np.random.Generator) -> list[list[Sample]]:
    """One epoch of identity-balanced batches.

    Every batch holds exactly ``p`` distinct identities with ``k`` tracklets
    each (drawn with replacement when an identity owns fewer than ``k``).  A
    shuffled walk over the identity list guarantees each identity appears in
    at least one batch per epoch; short tail chunks are topped up with
    identities outside the chunk.
    """
    by_id: dict[int, list[Tracklet]] = {}
    for t in tracklets:
        by_id.setdefault(t.identity, []).append(t)
    ids = sorted(by_id)
    if len(ids) < spec.p:
        raise ConfigError(
            f"need at least p={spec.p} train identities, have {len(ids)}"
        )
    order = [ids[i] for i in rng.permutation(len(ids))]
    batches = []
    for start in range(0, len(order), spec.p):
        chunk = order[start:start + spec.p]
        if len(chunk) < spec.p:
            rest = [i for i in order if i not in chunk]
            extra = rng.choice(len(rest), size=spec.p - len(chunk), replace=False)
            chunk = chunk + [rest[i] for i in extra]
        batch: list[Sample] = []
        for ident in chunk:
            pool = by_id[ident]
            replace = len(pool) < spec.k
            picks = rng.choice(len(pool), size=spec.k, replace=replace)
            for idx in picks:
                tracklet = pool[int(idx)]
                batch.append((tracklet, rrs_sample(tracklet.length, frames_t, rng)))
        batches.append(batch)
    return batches


def augment_clip(frames: np.ndarray, rng: np.random.Generator, *, flip: bool = False,
                 crop: bool = False, erase: bool = False) -> np.ndarray:
    """Train-time transforms with one parameter draw per clip."""
    out = frames
    if flip and rng.random() < 0.5:
        out = out[:, :, ::-1, :]
    if crop:
        pad = 4
        t, h, w, c = out.shape
        padded = np.zeros((t, h + 2 * pad, w + 2 * pad, c), dtype=out.dtype)
        padded[:, pad:pad + h, pad:pad + w] = out
        dy, dx = rng.integers(0, 2 * pad + 1, size=2)
        out = padded[:, dy:dy + h, dx:dx + w]
    if erase and rng.random() < 0.5:
        t, h, w, _ = out.shape
        eh = int(rng.integers(h // 8, h // 4 + 1))
        ew = int(rng.integers(w // 8, w // 4 + 1))
        y0 = int(rng.integers(0, h - eh + 1))
        x0 = int(rng.integers(0, w - ew + 1))
        out = out.copy()
        out[:, y0:y0 + eh, x0:x0 + ew, :] = 0.5
    return out


def collate(samples: list[Sample], rng: np.random.Generator | None = None,
            *, flip: bool = False, crop: bool = False,
            erase: bool = False) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Materialize a batch as (clips, identities, cameras) tensors."""
    clips, ids, cams = [], [], []
    for tracklet, idxs in samples:
        frames = tracklet.frames_float()[idxs]  # (T, H, W, 3)
        if rng is not None and (flip or crop or erase):
            frames = augment_clip(frames, rng, flip=flip, crop=crop, erase=erase)
        clips.append(torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2))
        ids.append(tracklet.identity)
        cams.append(tracklet.camera)
    return (
        torch.stack(clips).to(torch.float64),
        torch.tensor(ids, dtype=torch.int64),
        torch.tensor(cams, dtype=torch.int64),
    )


# ---------------------------------------------------------------------------
# directory layout


def write_dataset_dir(index: DatasetIndex, root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    counts = {}
    for split in SPLITS:
        counts[split] = len(index.split(split))
        for tracklet in index.split(split):
            d = (root / split / f"{tracklet.identity:04d}"
                 / f"{tracklet.camera:02d}_{tracklet.tracklet_id:05d}")
            d.mkdir(parents=True, exist_ok=True)
            for f in range(tracklet.length):
                Image.fromarray(tracklet.frames[f]).save(d / f"frame_{f:05d}.png")
    manifest = {
        "format": MANIFEST_FORMAT,
        "image_h": index.image_h,
        "image_w": index.image_w,
        "num_identities": index.num_identities,
        "counts": counts,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset_dir(root: str | Path) -> DatasetIndex:
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise IngestionError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise IngestionError(f"unsupported manifest format in {manifest_path}")

    splits: dict[str, list[Tracklet]] = {}
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            raise IngestionError(f"missing split directory: {split_dir}")
        tracklets = []
        for ident_dir in sorted(split_dir.iterdir()):
            if not ident_dir.is_dir():
                raise IngestionError(f"unexpected file in split: {ident_dir}")
            try:
                identity = int(ident_dir.name)
            except ValueError:
                raise IngestionError(f"identity directory is not numeric: {ident_dir}") from None
            for track_dir in sorted(ident_dir.iterdir()):
                name = track_dir.name
                if not track_dir.is_dir() or "_" not in name:
                    raise IngestionError(f"malformed tracklet directory: {track_dir}")
                cam_part, tid_part = name.split("_", 1)
                try:
                    camera, tracklet_id = int(cam_part), int(tid_part)
                except ValueError:
                    raise IngestionError(f"malformed tracklet directory: {track_dir}") from None
                frame_paths = sorted(track_dir.glob("frame_*.png"))
                if not frame_paths:
                    raise IngestionError(f"tracklet has no frames: {track_dir}")
                frames = np.stack([np.asarray(Image.open(p)) for p in frame_paths])
                if frames.shape[1:] != (manifest["image_h"], manifest["image_w"], 3):
                    raise IngestionError(
                        f"frame size {frames.shape[1:]} does not match manifest in {track_dir}"
                    )
                tracklets.append(Tracklet(frames, identity, camera, tracklet_id))
        if manifest["counts"].get(split) != len(tracklets):
            raise IngestionError(
                f"manifest lists {manifest['counts'].get(split)} {split} tracklets, "
                f"found {len(tracklets)} under {split_dir}"
            )
        splits[split] = tracklets
    if not splits["query"]:
        raise IngestionError(f"dataset at {root} has an empty query split")

    all_ids = sorted({t.identity for s in splits.values() for t in s})
    num_identities = manifest["num_identities"]
    if all_ids != list(range(num_identities)):
        raise IngestionError(
            f"identity ids under {root} are not dense in [0, {num_identities}): {all_ids}"
        )
    return DatasetIndex(
        train=splits["train"], query=splits["query"], gallery=splits["gallery"],
        image_h=manifest["image_h"], image_w=manifest["image_w"],
        num_identities=num_identities,
    )


def load_synthetic_spec(path: str | Path) -> SyntheticSpec:
    """Read a ``[synthetic]`` section mirroring the SyntheticSpec fields."""
    parser = configparser.ConfigParser()
    if not parser.read(Path(path)):
        raise ConfigError(f"spec file not found: {path}")
    if parser.sections() != ["synthetic"]:
        raise ConfigError(f"spec file must contain exactly a [synthetic] section: {path}")
    allowed = {f.name: f for f in fields(SyntheticSpec)}
    kwargs = {}
    for key, raw in parser.items("synthetic"):
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in [synthetic]")
        typ = {"int": int, "float": float}[allowed[key].type]
        try:
            kwargs[key] = typ(raw)
        except ValueError as exc:
            raise ConfigError(f"key '{key}': cannot parse {raw!r}") from exc
    return SyntheticSpec(**kwargs)
