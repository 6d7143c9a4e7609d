"""Counter-based random streams for reproducible (potentially parallel) sampling.

Every sampling task gets its own Philox stream keyed by a hash of
``(master seed, *path)``, where the path names the task, e.g.
``("c", iteration, l)``.  Draws are therefore independent of execution
order and scheduling: two samplers that consume the same named streams
produce identical results regardless of how the work is laid out.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "StreamFactory"]


def _key(seed: int, path: tuple) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for token in path:
        if isinstance(token, (int, np.integer)):
            h.update(b"i" + int(token).to_bytes(8, "little", signed=True))
        elif isinstance(token, str):
            h.update(b"s" + token.encode("utf-8") + b"\x00")
        else:
            raise TypeError(f"stream path tokens must be str or int, got {type(token)!r}")
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *path) -> np.random.Generator:
    """Return a fresh generator on the counter-based stream named by *path*."""
    return np.random.Generator(np.random.Philox(key=_key(seed, path)))


class StreamFactory:
    """Factory bound to one master seed; ``factory(*path)`` returns a stream."""

    def __init__(self, seed: int):
        if not (0 <= int(seed) < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)

    def __call__(self, *path) -> np.random.Generator:
        return stream(self.seed, *path)
