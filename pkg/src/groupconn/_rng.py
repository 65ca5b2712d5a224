"""Counter-based random streams.

All randomness in the library flows from a single root seed. Independent
streams are derived with the Philox counter-based generator: the key is a
stable hash of ``(seed, purpose)`` and the counter encodes indices such as
the test number, so streams can be opened in any order (or in parallel)
and still produce identical draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "stream"]


def derive_seed(root: int, purpose: str) -> int:
    """Stable 64-bit subsystem seed from a root seed and a purpose string."""
    digest = hashlib.blake2b(f"{root}:{purpose}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Open an independent Philox stream for ``(seed, purpose, *indices)``.

    Identical arguments always yield an identical stream, on every
    platform. The stream identity is hashed into the 128-bit Philox key
    (the 256-bit block counter starts at zero and is free to advance as
    values are drawn), so distinct streams never overlap and can be opened
    in any order or in parallel. Typical index components are the test
    index, the output-neuron index, and a redraw attempt number.
    """
    for c in indices:
        if c < 0:
            raise ValueError("stream indices must be nonnegative")
    label = ":".join([str(seed), purpose, *map(str, indices)])
    digest = hashlib.blake2b(label.encode(), digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64).copy()
    return np.random.Generator(np.random.Philox(key=key))
