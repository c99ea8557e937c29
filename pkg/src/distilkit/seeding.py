"""Named, reproducible random sub-streams.

All randomness in the toolkit flows from one master seed. Components derive
independent generators via (seed, stable-name-hash [, indices]) tuples so each
stage is reproducible on its own; the hash is crc32, stable across platforms
and Python versions.
"""

import zlib

import numpy as np


def substream(seed, name, *indices):
    """Generator for the sub-stream `name` (plus optional integer indices)."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(i) & 0xFFFFFFFF for i in indices)
    return np.random.default_rng(key)


def substream_seed(seed, name, *indices):
    """A derived integer seed, for APIs that take a seed rather than an rng."""
    return int(substream(seed, name, *indices).integers(0, 2**63 - 1))
