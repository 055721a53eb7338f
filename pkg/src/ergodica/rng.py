"""Counter-based, splittable random streams.

Every stream is a root seed plus a path of integer labels.  The path is fed
to :class:`numpy.random.SeedSequence` as its spawn key and the resulting
128-bit key drives a Philox counter generator, so the draws of a stream
depend only on ``(seed, path)`` and never on evaluation order or thread
count.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("stream labels must be non-negative")
        return int(label)
    if isinstance(label, (float, np.floating)):
        data = np.float64(label).tobytes()
    elif isinstance(label, np.ndarray):
        data = np.ascontiguousarray(label, dtype=np.float64).tobytes()
    else:
        data = str(label).encode()
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


class RandomStream:
    """An immutable handle on one substream of a root seed."""

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)

    def substream(self, *labels) -> "RandomStream":
        """Child stream; labels may be ints, strings, floats or arrays."""
        return RandomStream(self.seed, self.path + tuple(_label_to_int(x) for x in labels))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at counter zero of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        key = ss.generate_state(2, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def __eq__(self, other):
        return isinstance(other, RandomStream) and (self.seed, self.path) == (other.seed, other.path)

    def __hash__(self):
        return hash((self.seed, self.path))

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, path={self.path})"


def as_generator(stream) -> np.random.Generator:
    """Accept a RandomStream, a Generator, or an int seed."""
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, RandomStream):
        return stream.generator()
    if isinstance(stream, (int, np.integer)):
        return RandomStream(int(stream)).generator()
    raise TypeError(f"cannot make a generator from {type(stream).__name__}")


def as_stream(stream) -> RandomStream:
    if isinstance(stream, RandomStream):
        return stream
    if isinstance(stream, (int, np.integer)):
        return RandomStream(int(stream))
    raise TypeError(f"expected a RandomStream or int seed, got {type(stream).__name__}")
