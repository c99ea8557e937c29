"""Hard and soft frame alignments, mass truncation, and the SPST disk cache.

A soft alignment keeps, per frame, the shortest prefix of states (by
descending probability) whose cumulative mass reaches a threshold, then
renormalizes — storing almost the whole distribution at a small fraction of
the dense cost. The binary cache format is SPST v1, little-endian:

    header  : magic "SPST" | version u32 | utterance_count u64
    per utt : id_len u16 | id (UTF-8) | frame_count u32
    per frm : entry_count u32 | entry_count x (state_id u32, prob f32)
    footer  : CRC32 (u32) over all preceding bytes

Probabilities are renormalized before writing, so readers see proper
distributions; reads verify the CRC and stream one utterance at a time.
"""

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    CrcMismatchError,
    DataError,
    DistributionError,
    TrailingDataError,
    TruncatedFileError,
    VersionMismatchError,
)
from .numeric import as_f64

SPST_MAGIC = b"SPST"
SPST_VERSION = 1
DEFAULT_MASS = 0.98

# slack for cumulative-mass comparisons; float accumulation of a distribution
# that sums to 1 +- 1e-6 must not flip the prefix choice at exact thresholds
_MASS_EPS = 1e-12

_ENTRY_DTYPE = np.dtype([("state", "<u4"), ("prob", "<f4")])


@dataclass
class SparsePosterior:
    """Truncated per-frame distribution: ids and probs sorted by descending
    prob (ties by ascending id), summing to 1 after renormalization.

    `retained_mass` is the pre-renormalization cumulative mass when the
    posterior came from truncate_to_mass; it is diagnostic only and is not
    persisted by the cache format.
    """

    ids: np.ndarray
    probs: np.ndarray
    retained_mass: float = None

    def __len__(self):
        return len(self.ids)

    @property
    def top_state(self):
        return int(self.ids[0])

    def validate(self, num_states=None):
        if len(self.ids) < 1:
            raise DistributionError("sparse posterior must have at least one entry")
        if len(self.ids) != len(self.probs):
            raise DistributionError("ids/probs length mismatch")
        if len(np.unique(self.ids)) != len(self.ids):
            raise DistributionError("duplicate state ids")
        if np.any(self.probs <= 0) or np.any(self.probs > 1 + 1e-6):
            raise DistributionError("probabilities must lie in (0, 1]")
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-6:
            raise DistributionError(f"probabilities sum to {np.sum(self.probs)}, not 1")
        order = np.lexsort((self.ids, -self.probs))
        if not np.array_equal(order, np.arange(len(self.ids))):
            raise DistributionError("entries not sorted by descending prob / ascending id")
        if num_states is not None and np.any(self.ids >= num_states):
            raise DataError(f"state id {int(self.ids.max())} >= num_states {num_states}")
        return self


@dataclass
class HardAlignment:
    """One state id per frame for one utterance."""

    utt_id: str
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise DataError(f"labels for {self.utt_id!r} must be 1-D")
        if len(self.labels) and self.labels.min() < 0:
            raise DataError(f"negative state id in {self.utt_id!r}")


@dataclass
class SoftAlignment:
    """Per-frame sparse posteriors for one utterance."""

    utt_id: str
    frames: list
    retained_mass_threshold: float = DEFAULT_MASS

    def __post_init__(self):
        if not 0 < self.retained_mass_threshold <= 1:
            raise ConfigError(
                f"retained_mass_threshold must be in (0, 1], got {self.retained_mass_threshold}")

    def frame_count(self):
        return len(self.frames)


def truncate_to_mass(dist, threshold=DEFAULT_MASS):
    """Shortest high-probability prefix with cumulative mass >= threshold,
    renormalized to sum to 1.

    States are ranked by descending probability, ties broken by ascending
    state id; zero-probability states are never retained. The discarded mass
    is at most 1 - threshold.
    """
    dist = as_f64(dist)
    if not 0 < threshold <= 1:
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    if dist.ndim != 1 or dist.size < 1:
        raise DistributionError(f"expected a 1-D distribution, got shape {dist.shape}")
    if not np.all(np.isfinite(dist)):
        raise DistributionError("distribution has non-finite entries")
    if np.any(dist < 0):
        raise DistributionError("distribution has negative entries")
    total = float(dist.sum())
    if abs(total - 1.0) > 1e-6:
        raise DistributionError(f"distribution sums to {total}, not 1")

    order = np.lexsort((np.arange(dist.size), -dist))
    ranked = dist[order]
    n_pos = int(np.count_nonzero(ranked))
    if n_pos == 0:
        raise DistributionError("distribution has no positive entries")
    cum = np.cumsum(ranked[:n_pos])
    target = min(threshold, float(cum[-1])) - _MASS_EPS
    k = int(np.searchsorted(cum, target, side="left")) + 1
    k = min(k, n_pos)
    ids = order[:k].astype(np.int64)
    probs = ranked[:k].copy()
    mass = float(probs.sum())
    return SparsePosterior(ids=ids, probs=probs / mass, retained_mass=mass)


def hard_from_soft(soft):
    """Top-1 state per frame; entries are stored ranked, so it is the head."""
    labels = np.fromiter((frame.top_state for frame in soft.frames), dtype=np.int64,
                         count=len(soft.frames))
    return HardAlignment(utt_id=soft.utt_id, labels=labels)


def estimate_full_cache_bytes(frames, states, bytes_per_value):
    """Dense-storage baseline: frames x states x bytes_per_value (exact integer)."""
    for name, v in (("frames", frames), ("states", states), ("bytes_per_value", bytes_per_value)):
        if int(v) != v or v <= 0:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    return int(frames) * int(states) * int(bytes_per_value)


# ---------------------------------------------------------------------------
# SPST codec


@dataclass
class CacheStats:
    """Write-side statistics; retained-mass fields are present only when the
    alignments carried truncation diagnostics."""

    utterances: int = 0
    frames: int = 0
    entries: int = 0
    bytes_written: int = 0
    min_retained_mass: float = None
    mean_retained_mass: float = None


def write_cache(alignments, path):
    """Write soft alignments to an SPST file (temp file + atomic rename)."""
    alignments = list(alignments)
    stats = CacheStats(utterances=len(alignments))
    masses = []
    payload = bytearray()
    payload += SPST_MAGIC
    payload += struct.pack("<I", SPST_VERSION)
    payload += struct.pack("<Q", len(alignments))
    for soft in alignments:
        id_bytes = soft.utt_id.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise DataError(f"utterance id too long: {len(id_bytes)} bytes")
        payload += struct.pack("<H", len(id_bytes))
        payload += id_bytes
        payload += struct.pack("<I", len(soft.frames))
        for frame in soft.frames:
            n = len(frame.ids)
            if n < 1:
                raise DistributionError(f"empty frame in {soft.utt_id!r}")
            if np.any(frame.ids < 0) or np.any(frame.ids > 0xFFFFFFFF):
                raise DataError(f"state id out of u32 range in {soft.utt_id!r}")
            payload += struct.pack("<I", n)
            rec = np.empty(n, dtype=_ENTRY_DTYPE)
            rec["state"] = frame.ids
            rec["prob"] = frame.probs.astype(np.float32)
            payload += rec.tobytes()
            stats.frames += 1
            stats.entries += n
            if frame.retained_mass is not None:
                masses.append(frame.retained_mass)
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)

    _atomic_write(path, bytes(payload))
    stats.bytes_written = len(payload)
    if masses and len(masses) == stats.frames:
        stats.min_retained_mass = float(min(masses))
        stats.mean_retained_mass = float(np.mean(masses))
    return stats


def _atomic_write(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _CheckedReader:
    """Sequential reader that tracks a running CRC and remaining byte budget."""

    def __init__(self, f, size):
        self.f = f
        self.remaining = size
        self.crc = 0

    def take(self, n, what):
        if n > self.remaining:
            raise TruncatedFileError(f"file ends inside {what} ({n} bytes needed)")
        data = self.f.read(n)
        if len(data) != n:
            raise TruncatedFileError(f"file ends inside {what} ({n} bytes needed)")
        self.remaining -= n
        self.crc = zlib.crc32(data, self.crc)
        return data

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def iter_cache(path):
    """Stream utterances from an SPST file without loading it whole.

    The CRC footer is verified after the last utterance; corrupted payload
    bytes therefore surface as CrcMismatchError when the iterator finishes.
    """
    size = os.stat(path).st_size
    with open(path, "rb") as f:
        r = _CheckedReader(f, size)
        magic = r.take(4, "magic")
        if magic != SPST_MAGIC:
            raise BadMagicError(f"not an SPST file (magic {magic!r})")
        version = r.u32("version")
        if version != SPST_VERSION:
            raise VersionMismatchError(f"SPST version {version} unsupported (want {SPST_VERSION})")
        utt_count = r.u64("utterance count")
        for _ in range(utt_count):
            id_len = r.u16("utterance id length")
            id_bytes = r.take(id_len, "utterance id")
            # corrupted id bytes surface via the CRC check, not a decode crash
            utt_id = id_bytes.decode("utf-8", errors="replace")
            frame_count = r.u32("frame count")
            frames = []
            for _ in range(frame_count):
                n = r.u32("entry count")
                raw = r.take(n * _ENTRY_DTYPE.itemsize, "frame entries")
                rec = np.frombuffer(raw, dtype=_ENTRY_DTYPE)
                frames.append(SparsePosterior(
                    ids=rec["state"].astype(np.int64),
                    probs=rec["prob"].astype(np.float64),
                ))
            yield SoftAlignment(utt_id=utt_id, frames=frames)
        payload_crc = r.crc
        stored = r.u32("crc footer")
        if stored != payload_crc:
            raise CrcMismatchError(f"CRC mismatch: stored {stored:#010x}, computed {payload_crc:#010x}")
        if r.remaining:
            raise TrailingDataError(f"{r.remaining} unexpected bytes after the CRC footer")


def read_cache(path):
    """All utterances of an SPST file, CRC-verified before returning."""
    return list(iter_cache(path))


def inspect_cache(path):
    """Structural statistics of a finished cache file."""
    utterances = 0
    frames = 0
    entries = 0
    min_entries = None
    max_entries = 0
    min_sum = None
    total_sum = 0.0
    for soft in iter_cache(path):
        utterances += 1
        for frame in soft.frames:
            frames += 1
            entries += len(frame)
            min_entries = len(frame) if min_entries is None else min(min_entries, len(frame))
            max_entries = max(max_entries, len(frame))
            s = float(frame.probs.sum())
            min_sum = s if min_sum is None else min(min_sum, s)
            total_sum += s
    return {
        "utterances": utterances,
        "frames": frames,
        "entries": entries,
        "mean_entries_per_frame": entries / frames if frames else 0.0,
        "min_entries_per_frame": min_entries if min_entries is not None else 0,
        "max_entries_per_frame": max_entries,
        "min_frame_mass": min_sum if min_sum is not None else 0.0,
        "mean_frame_mass": total_sum / frames if frames else 0.0,
        "file_bytes": os.stat(path).st_size,
    }


# ---------------------------------------------------------------------------
# hard-alignment text format: one line per utterance, "<id> <state> <state> ..."


def write_hard_labels(alignments, path):
    lines = []
    for a in alignments:
        lines.append(" ".join([a.utt_id] + [str(int(s)) for s in a.labels]))
    _atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))


def read_hard_labels(path):
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels = np.array([int(p) for p in parts[1:]], dtype=np.int64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer state id") from None
            out.append(HardAlignment(utt_id=parts[0], labels=labels))
    return out
