"""Model checkpoints: MDLP v1 container, little-endian.

    header : magic "MDLP" | version u32
    spec   : text_len u32 | canonical key=value lines (UTF-8)
    blobs  : blob_count u32 | per blob: rank u8 | rank x u32 dims | f32 data
    footer : CRC32 (u32) over all preceding bytes

Weights are stored float32 in the canonical array order of the layer plan;
loading restores float64 parameters holding exactly the stored f32 values, so
save(load(f)) reproduces f byte for byte. Files are written to a temp name
and atomically renamed.
"""

import os
import struct
import zlib

import numpy as np

from . import layers
from .alignments import _atomic_write
from .errors import (
    BadMagicError,
    ConfigError,
    CrcMismatchError,
    TrailingDataError,
    TruncatedFileError,
    VersionMismatchError,
)

MDLP_MAGIC = b"MDLP"
MDLP_VERSION = 1

_SPEC_KEYS = ("kind", "input_dim", "num_states", "hidden", "context",
              "tc_width", "tc_out", "dnn_pre", "blstm_hidden", "dnn_post")


def spec_to_text(spec):
    """Canonical text block: fixed key order, tuples as comma lists."""
    lines = []
    for key in _SPEC_KEYS:
        value = getattr(spec, key)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def spec_from_text(text):
    fields = {}
    for lineno, line in enumerate(text.strip().splitlines(), 1):
        if "=" not in line:
            raise ConfigError(f"spec line {lineno} is not key=value: {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    unknown = set(fields) - set(_SPEC_KEYS)
    if unknown:
        raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
    missing = set(_SPEC_KEYS) - set(fields)
    if missing:
        raise ConfigError(f"missing spec keys: {sorted(missing)}")

    def as_tuple(raw):
        return tuple(int(v) for v in raw.split(",")) if raw else ()

    try:
        return layers.ModelSpec(
            kind=fields["kind"],
            input_dim=int(fields["input_dim"]),
            num_states=int(fields["num_states"]),
            hidden=as_tuple(fields["hidden"]),
            context=as_tuple(fields["context"]),
            tc_width=int(fields["tc_width"]),
            tc_out=int(fields["tc_out"]),
            dnn_pre=as_tuple(fields["dnn_pre"]),
            blstm_hidden=int(fields["blstm_hidden"]),
            dnn_post=as_tuple(fields["dnn_post"]),
        )
    except ValueError as e:
        raise ConfigError(f"bad spec value: {e}") from None


def save_checkpoint(path, spec, params):
    arrays = params.arrays()
    payload = bytearray()
    payload += MDLP_MAGIC
    payload += struct.pack("<I", MDLP_VERSION)
    spec_bytes = spec_to_text(spec).encode("utf-8")
    payload += struct.pack("<I", len(spec_bytes))
    payload += spec_bytes
    payload += struct.pack("<I", len(arrays))
    for a in arrays:
        payload += struct.pack("<B", a.ndim)
        payload += struct.pack(f"<{a.ndim}I", *a.shape)
        payload += np.ascontiguousarray(a, dtype="<f4").tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
    _atomic_write(path, bytes(payload))


def load_checkpoint(path):
    """Returns (spec, params); validates magic, version, CRC, and shapes."""
    size = os.stat(path).st_size
    with open(path, "rb") as f:
        data = f.read(size)

    if len(data) < 4 or data[:4] != MDLP_MAGIC:
        raise BadMagicError(f"not an MDLP file (magic {data[:4]!r})")
    if len(data) < 12:
        raise TruncatedFileError("file ends inside the header")
    crc_stored = struct.unpack("<I", data[-4:])[0]
    crc_actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if crc_stored != crc_actual:
        raise CrcMismatchError(
            f"CRC mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}")

    pos = 4
    version = struct.unpack_from("<I", data, pos)[0]
    pos += 4
    if version != MDLP_VERSION:
        raise VersionMismatchError(f"MDLP version {version} unsupported (want {MDLP_VERSION})")

    def need(n, what):
        if pos + n > len(data) - 4:
            raise TruncatedFileError(f"file ends inside {what}")

    need(4, "spec length")
    spec_len = struct.unpack_from("<I", data, pos)[0]
    pos += 4
    need(spec_len, "spec text")
    spec = spec_from_text(data[pos : pos + spec_len].decode("utf-8", errors="replace"))
    pos += spec_len

    need(4, "blob count")
    blob_count = struct.unpack_from("<I", data, pos)[0]
    pos += 4
    arrays = []
    for b in range(blob_count):
        need(1, f"blob {b} rank")
        rank = data[pos]
        pos += 1
        need(4 * rank, f"blob {b} dims")
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        need(4 * n, f"blob {b} data")
        a = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float64)
        arrays.append(a.reshape(dims))
        pos += 4 * n
    if pos != len(data) - 4:
        raise TrailingDataError(f"{len(data) - 4 - pos} unexpected bytes before the CRC footer")
    params = layers.params_from_arrays(spec, arrays)
    return spec, params
