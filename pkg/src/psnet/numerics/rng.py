"""Counter-based random streams.

Every stochastic component draws from a stream identified by
``(global seed, stream label, index)``.  Streams are backed by the Philox
counter-based bit generator, so two streams with different ids are
statistically independent and a stream is fully reproducible from its id
regardless of what other streams were consumed.  This is what makes
parallel trace generation deterministic: worker ``i`` gets the stream for
trace ``i`` no matter which process runs it.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream_key", "stream"]


def stream_key(seed: int, label: str, index: int = 0) -> int:
    """Derive a 128-bit Philox key from (seed, label, index)."""
    raw = f"{seed}/{label}/{index}".encode()
    return int.from_bytes(hashlib.sha256(raw).digest()[:16], "little")


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the generator for one (seed, label, index) stream."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, label, index)))
