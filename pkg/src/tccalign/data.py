"""Sequence datasets: in-memory types, synthetic generation, and disk format.

A dataset is a JSON manifest plus one binary file per sequence (magic
"TCCF": version, frame count, feature dim, row-major float64 frames).  The
synthetic generator stands in for real action videos: every sequence runs
through the same smooth latent curve at its own random, monotone pace, so
ground-truth alignment between any two sequences is the monotone map that
matches equal progress.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .diff import ContractError, ShapeError

SEQUENCE_MAGIC = b"TCCF"
SEQUENCE_VERSION = 1


@dataclass
class PhaseAnnotation:
    """Key-event frame indices (first is 0, last is N-1) and per-frame phases.

    Phase j spans frames [key_events[j], key_events[j+1]); the final phase
    also owns the last frame, so num_phases == len(key_events) - 1.
    """

    key_events: list[int]
    phase_labels: np.ndarray

    def __post_init__(self):
        self.key_events = [int(e) for e in self.key_events]
        self.phase_labels = np.asarray(self.phase_labels, dtype=np.int64)

    @property
    def num_phases(self) -> int:
        return len(self.key_events) - 1

    def validate(self, n_frames: int) -> None:
        ev = self.key_events
        if len(ev) < 2 or ev[0] != 0 or ev[-1] != n_frames - 1:
            raise ContractError("key_events must start at 0 and end at N-1")
        if any(a >= b for a, b in zip(ev, ev[1:])):
            raise ContractError("key_events must be strictly increasing")
        if self.phase_labels.shape != (n_frames,):
            raise ContractError("phase_labels must have one entry per frame")
        for j in range(self.num_phases):
            hi = ev[j + 1] if j + 1 < self.num_phases else n_frames
            seg = self.phase_labels[ev[j]:hi]
            if not np.all(seg == j):
                raise ContractError(f"phase {j} is not constant between its events")


@dataclass
class FeatureSequence:
    """One video: an ordered matrix of per-frame feature vectors."""

    id: str
    frames: np.ndarray
    fps: float = 20.0
    annotation: PhaseAnnotation | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ShapeError("frames must be a nonempty N-by-d matrix")
        if not np.all(np.isfinite(self.frames)):
            raise ContractError(f"sequence {self.id}: frames must be finite")
        if self.fps <= 0:
            raise ContractError("fps must be positive")
        if self.annotation is not None:
            self.annotation.validate(len(self))

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class SyntheticConfig:
    num_sequences: int = 50
    min_len: int = 60
    max_len: int = 120
    latent_dim: int = 2
    obs_dim: int = 16
    num_phases: int = 4
    noise_std: float = 0.05
    warp_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_phases < 2:
            raise ContractError("num_phases must be >= 2")
        if not self.min_len >= self.num_phases:
            raise ContractError("min_len must be >= num_phases")
        if self.max_len < self.min_len:
            raise ContractError("max_len must be >= min_len")
        if self.noise_std < 0 or self.warp_strength < 0:
            raise ContractError("noise_std and warp_strength must be >= 0")


class LatentCurve:
    """Shared smooth trajectory z(p), p in [0, 1], from 4 sinusoid components.

    One fast, high-amplitude component loops through latent space several
    times (think repeated sub-motions of an action), while three slow,
    low-amplitude components drift the loop so each revolution is distinct.
    A single frame therefore looks like several different moments of the
    action; resolving which one requires the drift and temporal context,
    which is exactly what a trained encoder can exploit and raw
    nearest-neighbor matching cannot.
    """

    LOOP_REVS = (4.5, 5.5)  # revolutions of the fast component
    DRIFT_AMP = 0.18
    DRIFT_FREQ = (0.3, 1.5)

    def __init__(self, latent_dim: int, rng: np.random.Generator):
        base = rng.uniform(*self.LOOP_REVS)
        self.freq = np.empty((latent_dim, 4))
        self.amp = np.empty((latent_dim, 4))
        self.phase = rng.uniform(0.0, 2 * np.pi, size=(latent_dim, 4))
        for l in range(latent_dim):
            self.freq[l, 0] = base + rng.uniform(-0.1, 0.1)
            self.amp[l, 0] = rng.uniform(0.8, 1.2)
            self.freq[l, 1:] = rng.uniform(*self.DRIFT_FREQ, size=3)
            self.amp[l, 1:] = rng.uniform(0.5, 1.0, size=3) * self.DRIFT_AMP

    def __call__(self, p: np.ndarray) -> np.ndarray:
        # (len(p), latent_dim)
        arg = 2 * np.pi * self.freq[None, :, :] * p[:, None, None] + self.phase
        return (self.amp[None, :, :] * np.sin(arg)).sum(axis=2)


def _phase_annotation_from_progress(p: np.ndarray, num_phases: int) -> PhaseAnnotation:
    n = p.shape[0]
    raw = np.minimum((p * num_phases).astype(np.int64), num_phases - 1)
    starts = [0] + [i for i in range(1, n) if raw[i] != raw[i - 1]]
    if len(starts) > 1 and starts[-1] == n - 1:
        # A single-frame final phase would collide with the End event; absorb
        # the last frame into the previous phase.
        starts = starts[:-1]
    labels = np.zeros(n, dtype=np.int64)
    for j, s in enumerate(starts):
        hi = starts[j + 1] if j + 1 < len(starts) else n
        labels[s:hi] = j
    return PhaseAnnotation(key_events=starts + [n - 1], phase_labels=labels)


_WARP_SMOOTHNESS = 0.8  # AR(1) on log-rates; marginals stay standard normal


def _monotone_progress(length: int, warp_strength: float,
                       rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal(length - 1)
    g = np.empty(length - 1)
    g[0] = eps[0]
    rho = _WARP_SMOOTHNESS
    for t in range(1, length - 1):
        g[t] = rho * g[t - 1] + np.sqrt(1.0 - rho * rho) * eps[t]
    p = np.concatenate([[0.0], np.cumsum(np.exp(warp_strength * g))])
    return p / p[-1]


def generate_synthetic(config: SyntheticConfig) -> list[FeatureSequence]:
    """Sequences tracing one shared latent curve at random monotone paces.

    Per sequence: step rates r_t = exp(warp_strength * g_t), where the g_t
    are standard normal with smooth temporal correlation (an action speeds
    up and slows down, it does not teleport), give strictly increasing
    progress p (p_0 = 0, p_last = 1); frames are a fixed random affine map
    of the latent curve plus isotropic Gaussian noise.  Phase labels are
    floor(p * K) clipped to K - 1, with key events at each phase's first
    frame.  Deterministic given config.seed.
    """
    rng = np.random.default_rng(config.seed)
    curve = LatentCurve(config.latent_dim, rng)
    obs_w = rng.normal(size=(config.obs_dim, config.latent_dim)) / np.sqrt(config.latent_dim)
    obs_b = rng.normal(size=config.obs_dim) * 0.1

    sequences = []
    for s in range(config.num_sequences):
        length = int(rng.integers(config.min_len, config.max_len + 1))
        p = _monotone_progress(length, config.warp_strength, rng)
        latent = curve(p)
        frames = latent @ obs_w.T + obs_b
        if config.noise_std > 0:
            frames = frames + config.noise_std * rng.standard_normal(frames.shape)
        annotation = _phase_annotation_from_progress(p, config.num_phases)
        sequences.append(FeatureSequence(
            id=f"seq{s:04d}", frames=frames, fps=20.0, annotation=annotation))
    return sequences


def jitter_augment(seq: FeatureSequence, std: float, seed: int) -> FeatureSequence:
    """Feature-space augmentation: i.i.d. Gaussian noise, labels untouched."""
    if std < 0:
        raise ContractError("jitter std must be >= 0")
    if std == 0:
        return seq
    rng = np.random.default_rng(seed)
    return FeatureSequence(id=seq.id,
                           frames=seq.frames + std * rng.standard_normal(seq.frames.shape),
                           fps=seq.fps, annotation=seq.annotation)


def split_dataset(sequences, train_fraction: float = 0.8, seed: int = 0):
    """Deterministic train/val split by ranking seeded id hashes.

    Exact counts: the first floor(train_fraction * n) sequences in hash
    order go to train, so the split never depends on manifest order.
    """
    if not 0 < train_fraction < 1:
        raise ContractError("train_fraction must lie in (0, 1)")

    def rank(seq):
        return hashlib.sha256(f"{seed}:{seq.id}".encode()).hexdigest()

    ordered = sorted(sequences, key=rank)
    n_train = int(len(ordered) * train_fraction)
    return ordered[:n_train], ordered[n_train:]


# ---------------------------------------------------------------------------
# Disk format
# ---------------------------------------------------------------------------

def save_sequence_file(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(SEQUENCE_MAGIC)
        fileio.write_u32(f, SEQUENCE_VERSION)
        fileio.write_u32(f, frames.shape[0])
        fileio.write_u32(f, frames.shape[1])
        fileio.write_f64_array(f, frames)


def load_sequence_file(path) -> np.ndarray:
    with open(path, "rb") as f:
        fileio.expect_magic(f, SEQUENCE_MAGIC, path)
        fileio.expect_version(f, SEQUENCE_VERSION, path)
        n = fileio.read_u32(f)
        d = fileio.read_u32(f)
        if n * d > fileio.MAX_ELEMENTS:
            raise fileio.SizeOverflowError(
                f"{path}: header claims {n} x {d} values")
        data = fileio.read_f64_array(f, n * d, "frame data")
        fileio.expect_eof(f, path)
    return data.reshape(n, d)


def save_dataset(sequences, manifest_path) -> None:
    """Write the manifest and one binary frame file per sequence.

    Frame files live next to the manifest and are named <id>.tccf; writing
    is byte-deterministic for identical inputs.
    """
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    records = []
    for seq in sequences:
        rel = f"{seq.id}.tccf"
        save_sequence_file(manifest_path.parent / rel, seq.frames)
        rec = {"id": seq.id, "path": rel, "fps": seq.fps}
        if seq.annotation is not None:
            rec["key_events"] = list(seq.annotation.key_events)
            rec["phase_labels"] = seq.annotation.phase_labels.tolist()
        records.append(rec)
    doc = {"format": "tcc-dataset", "version": 1, "sequences": records}
    with open(manifest_path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_dataset(manifest_path) -> list[FeatureSequence]:
    """Load a manifest and every referenced frame file; round-trips exactly."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise fileio.FileFormatError(f"{manifest_path}: invalid JSON: {exc}") from exc
    if doc.get("format") != "tcc-dataset":
        raise fileio.BadMagicError(f"{manifest_path}: not a tcc-dataset manifest")
    if doc.get("version") != 1:
        raise fileio.VersionMismatchError(
            f"{manifest_path}: manifest version {doc.get('version')}")
    sequences = []
    for rec in doc["sequences"]:
        path = manifest_path.parent / rec["path"]
        if not path.exists():
            raise FileNotFoundError(f"manifest references missing file: {path}")
        frames = load_sequence_file(path)
        annotation = None
        if "key_events" in rec:
            annotation = PhaseAnnotation(key_events=rec["key_events"],
                                         phase_labels=np.asarray(rec["phase_labels"]))
        sequences.append(FeatureSequence(id=rec["id"], frames=frames,
                                         fps=float(rec["fps"]),
                                         annotation=annotation))
    return sequences
