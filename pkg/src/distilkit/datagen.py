"""Deterministic synthetic frame-classification corpus.

Each utterance follows a hidden left-to-right Markov chain (self-loop
probability, advance wraps modulo the state count so every state is
populated). Emissions are the state's mean vector plus a scaled copy of the
previous state's mean and Gaussian noise. State means are built so that the
easy part of the label (its group) is frame-local while the residual part is
shared across the whole utterance through the chain; sequence models
therefore genuinely beat frame-local classifiers on these defaults.

Features are persisted in the FEAT v1 container, little-endian:

    header  : magic "FEAT" | version u32 | utterance_count u64
    per utt : id_len u16 | id (UTF-8) | frame_count u32 | dim u32
              | frame_count * dim f32 (row-major)

Labels use the hard-alignment text format from `alignments`.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .alignments import HardAlignment, read_hard_labels, write_hard_labels, _atomic_write
from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    TrailingDataError,
    TruncatedFileError,
    VersionMismatchError,
)

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1

SPLITS = ("train", "dev", "test")

# strength of the previous-state term in the emission
DEFAULT_COUPLING = 0.3
# State means pair up consecutive states on a shared base vector plus a tiny
# state-specific offset, so the exact frame where a run crosses from one twin
# to the next is nearly unobservable — the synthetic analogue of forced-
# alignment boundary noise: per-frame hard labels carry irreducible coin-flip
# information in those zones, while a sequence model's posterior hedges them
# in a calibrated way. The base separation keeps the paired-state identity a
# noisy (but solvable) problem for frame-local models. Scales are tuned once
# against the default corpus.
TWIN_SPAN = 2
GROUP_SCALE = 0.30
MEMBER_SCALE = 0.02


def state_means(num_states, feature_dim, rng):
    groups = (num_states + TWIN_SPAN - 1) // TWIN_SPAN
    base = rng.standard_normal((groups, feature_dim))
    fine = rng.standard_normal((num_states, feature_dim))
    return GROUP_SCALE * base[np.arange(num_states) // TWIN_SPAN] + MEMBER_SCALE * fine


@dataclass(frozen=True)
class SynthSpec:
    num_states: int = 48
    feature_dim: int = 16
    train_utts: int = 400
    dev_utts: int = 50
    test_utts: int = 50
    min_frames: int = 40
    max_frames: int = 80
    self_loop: float = 0.85
    noise_sigma: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.num_states < 2:
            raise ConfigError("num_states must be >= 2")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if min(self.train_utts, self.dev_utts, self.test_utts) < 1:
            raise ConfigError("every split needs at least one utterance")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ConfigError("need 1 <= min_frames <= max_frames")
        if not 0 < self.self_loop < 1:
            raise ConfigError("self_loop must be in (0, 1)")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be positive")

    def split_counts(self):
        return {"train": self.train_utts, "dev": self.dev_utts, "test": self.test_utts}


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray
    labels: np.ndarray


@dataclass
class SynthData:
    spec: SynthSpec
    splits: dict = field(default_factory=dict)

    def frame_counts(self):
        return {name: sum(u.features.shape[0] for u in utts)
                for name, utts in self.splits.items()}


def generate(spec, temporal_coupling=DEFAULT_COUPLING):
    """Build all three splits deterministically from spec.seed."""
    from .seeding import substream

    means = state_means(spec.num_states, spec.feature_dim, substream(spec.seed, "means"))
    data = SynthData(spec=spec)
    for split, count in spec.split_counts().items():
        utts = []
        for u in range(count):
            rng = substream(spec.seed, f"utt/{split}", u)
            T = int(rng.integers(spec.min_frames, spec.max_frames + 1))
            labels = np.empty(T, dtype=np.int64)
            state = int(rng.integers(spec.num_states))
            advance = rng.random(T)
            for t in range(T):
                if t > 0 and advance[t] >= spec.self_loop:
                    state = (state + 1) % spec.num_states
                labels[t] = state
            prev = np.concatenate(([labels[0]], labels[:-1]))
            noise = spec.noise_sigma * rng.standard_normal((T, spec.feature_dim))
            features = means[labels] + temporal_coupling * means[prev] + noise
            utts.append(Utterance(utt_id=f"{split}-{u:04d}", features=features,
                                  labels=labels))
        data.splits[split] = utts
    return data


# ---------------------------------------------------------------------------
# FEAT codec


def write_feat(utterances, path):
    """Write (id, features) pairs; features are stored as float32."""
    payload = bytearray()
    payload += FEAT_MAGIC
    payload += struct.pack("<I", FEAT_VERSION)
    utterances = list(utterances)
    payload += struct.pack("<Q", len(utterances))
    for utt_id, features in utterances:
        id_bytes = utt_id.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise DataError(f"utterance id too long: {len(id_bytes)} bytes")
        features = np.asarray(features)
        if features.ndim != 2:
            raise DataError(f"features for {utt_id!r} must be [frames, dim]")
        payload += struct.pack("<H", len(id_bytes))
        payload += id_bytes
        payload += struct.pack("<II", features.shape[0], features.shape[1])
        payload += np.ascontiguousarray(features, dtype="<f4").tobytes()
    _atomic_write(path, bytes(payload))


def read_feat(path):
    """All (id, features) pairs; features come back as float64 matrices."""
    size = os.stat(path).st_size
    out = []
    with open(path, "rb") as f:
        remaining = size

        def take(n, what):
            nonlocal remaining
            if n > remaining:
                raise TruncatedFileError(f"file ends inside {what}")
            data = f.read(n)
            if len(data) != n:
                raise TruncatedFileError(f"file ends inside {what}")
            remaining -= n
            return data

        magic = take(4, "magic")
        if magic != FEAT_MAGIC:
            raise BadMagicError(f"not a FEAT file (magic {magic!r})")
        version = struct.unpack("<I", take(4, "version"))[0]
        if version != FEAT_VERSION:
            raise VersionMismatchError(f"FEAT version {version} unsupported (want {FEAT_VERSION})")
        count = struct.unpack("<Q", take(8, "utterance count"))[0]
        for _ in range(count):
            id_len = struct.unpack("<H", take(2, "id length"))[0]
            utt_id = take(id_len, "utterance id").decode("utf-8", errors="replace")
            frames, dim = struct.unpack("<II", take(8, "frame header"))
            raw = take(frames * dim * 4, "frame data")
            feats = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(frames, dim)
            out.append((utt_id, feats))
        if remaining:
            raise TrailingDataError(f"{remaining} unexpected trailing bytes")
    return out


# ---------------------------------------------------------------------------
# dataset directories: <split>.feat + <split>.labels per split


def write_dataset(data, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for split, utts in data.splits.items():
        write_feat([(u.utt_id, u.features) for u in utts],
                   os.path.join(out_dir, f"{split}.feat"))
        write_hard_labels([HardAlignment(utt_id=u.utt_id, labels=u.labels) for u in utts],
                          os.path.join(out_dir, f"{split}.labels"))


def read_split(data_dir, split):
    """Utterances of one split, joining features with labels by id."""
    feat_path = os.path.join(data_dir, f"{split}.feat")
    label_path = os.path.join(data_dir, f"{split}.labels")
    feats = read_feat(feat_path)
    labels = {a.utt_id: a.labels for a in read_hard_labels(label_path)}
    utts = []
    for utt_id, features in feats:
        if utt_id not in labels:
            raise DataError(f"{label_path} has no labels for utterance {utt_id!r}")
        lab = labels[utt_id]
        if len(lab) != features.shape[0]:
            raise DataError(
                f"utterance {utt_id!r}: {features.shape[0]} frames vs {len(lab)} labels")
        utts.append(Utterance(utt_id=utt_id, features=features, labels=lab))
    return utts


def read_features_only(data_dir, split):
    return read_feat(os.path.join(data_dir, f"{split}.feat"))
