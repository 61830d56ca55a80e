"""Counter-based random number streams.

Every source of randomness in the pipeline is a Philox stream keyed by
(master seed, purpose tag, item indices).  Streams with distinct keys are
statistically independent, and the value drawn for item i never depends on
how many workers are running or in what order items are processed.  That is
what makes whole runs byte-reproducible under any ``--jobs`` setting.
"""

import hashlib

import numpy as np

_DOMAIN = b"dermdiff.rng.v1"


def stream_key(seed: int, tag: str, *indices: int) -> int:
    """Derive a 128-bit Philox key from (seed, tag, indices)."""
    h = hashlib.sha256(_DOMAIN)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    h.update(tag.encode("utf-8"))
    h.update(b"\x00")
    for idx in indices:
        h.update(int(idx).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest()[:16], "little")


def stream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Independent generator for one (purpose, item) slot of a run."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, tag, *indices)))


def normal32(seed: int, tag: str, *indices: int, shape=()) -> np.ndarray:
    """Standard-normal float32 draw from the keyed stream."""
    return stream(seed, tag, *indices).standard_normal(shape, dtype=np.float32)
