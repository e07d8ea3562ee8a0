"""Seeded, counter-based random streams.

All randomness flows through :func:`stream`, which derives an independent
Philox generator from a 64-bit master seed and a tuple of labels.  Two calls
with the same seed and labels always return identical streams, regardless of
the order in which other streams were created.
"""

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def _label_key(label):
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf8"))


def stream(seed, *labels):
    """Return a ``numpy.random.Generator`` for ``(seed, *labels)``."""
    seq = np.random.SeedSequence(int(seed) & MASK64,
                                 spawn_key=tuple(_label_key(l) for l in labels))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed, *labels):
    """Derive a child 64-bit integer seed, for storing in result rows."""
    seq = np.random.SeedSequence(int(seed) & MASK64,
                                 spawn_key=tuple(_label_key(l) for l in labels))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
