"""Counter-based random streams keyed by ``(seed, label)``.

Every consumer of randomness (weight init, augmentation, dropout masks,
shuffles) derives its own labelled stream, so adding a consumer never shifts
the draws seen by another one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _philox_key(seed: int, label: str) -> np.ndarray:
    digest = hashlib.blake2b(
        f"{int(seed) & 0xFFFFFFFFFFFFFFFF}\x00{label}".encode(), digest_size=16
    ).digest()
    return np.frombuffer(digest, dtype="<u8").copy()


class RngStream:
    """Deterministic draw sequence identified by a seed and a string label.

    The underlying generator is Philox (counter based); the key is a hash of
    ``(seed, label)`` and the counter starts at zero, so the n-th draw depends
    only on ``(seed, label, n)``.
    """

    __slots__ = ("seed", "label", "_gen")

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = str(label)
        self._gen = np.random.Generator(np.random.Philox(key=_philox_key(self.seed, self.label)))

    def child(self, *parts) -> "RngStream":
        """Fresh stream for a sub-consumer, e.g. ``rng.child("views", 3)``."""
        suffix = "/".join(str(p) for p in parts)
        return RngStream(self.seed, f"{self.label}/{suffix}")

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    # thin pass-throughs used throughout the package
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, label={self.label!r})"


def as_stream(seed_or_stream, label: str = "root") -> RngStream:
    if isinstance(seed_or_stream, RngStream):
        return seed_or_stream
    if seed_or_stream is None:
        seed_or_stream = 0
    return RngStream(int(seed_or_stream), label)
