"""Reproducible random number streams.

Every public API that consumes randomness takes an :class:`RngStream` value
instead of a live generator.  A stream is a (seed, path) pair; the path is a
tuple of labels identifying a named substream.  Two streams with the same seed
and path always produce the same sample sequence, so concurrent consumers can
derive independent substreams without sharing mutable state.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

ALGORITHM = "pcg64"


def _label_entropy(label: object) -> int:
    """Map a path label to a stable 32-bit integer."""
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream rooted at a 64-bit seed."""

    seed: int
    path: tuple = ()
    algorithm: str = field(default=ALGORITHM)

    def child(self, *labels: object) -> "RngStream":
        """Derive a substream named by appending `labels` to the path."""
        return RngStream(self.seed, self.path + tuple(labels), self.algorithm)

    def generator(self) -> np.random.Generator:
        """Instantiate a fresh generator positioned at the stream start."""
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unknown rng algorithm {self.algorithm!r}")
        entropy = [int(self.seed) & 0xFFFFFFFFFFFFFFFF]
        entropy.extend(_label_entropy(p) for p in self.path)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
