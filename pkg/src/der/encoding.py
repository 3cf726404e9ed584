"""Text featurization for the policy and the stop classifier.

The default encoder hashes lowercased word unigrams and bigrams into a
fixed number of buckets and L2-normalizes the counts.  It is deterministic
across processes (CRC32, not Python's randomized ``hash``), which keeps
checkpointed policies bit-reproducible.
"""

from __future__ import annotations

import zlib
from typing import Protocol

import numpy as np


class Encoder(Protocol):
    """Maps text to a fixed-dimension feature vector, deterministically."""

    @property
    def dim(self) -> int: ...

    def encode(self, text: str) -> np.ndarray: ...


class HashedNgramEncoder:
    """Hashed bag of unigrams+bigrams with L2 normalization.

    Encodings are memoized; callers must treat returned vectors as
    read-only.
    """

    def __init__(self, dim: int = 1024, cache_size: int = 8192):
        if dim < 1:
            raise ValueError("encoder dimension must be positive")
        self._dim = dim
        self._cache: dict[str, np.ndarray] = {}
        self._cache_size = cache_size

    @property
    def dim(self) -> int:
        return self._dim

    def encode(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        vec = self._encode(text)
        if len(self._cache) >= self._cache_size:
            self._cache.clear()
        self._cache[text] = vec
        return vec

    def _encode(self, text: str) -> np.ndarray:
        vec = np.zeros(self._dim, dtype=np.float64)
        tokens = text.lower().split()
        if not tokens:
            return vec
        for tok in tokens:
            vec[_bucket(tok, self._dim)] += 1.0
        for first, second in zip(tokens, tokens[1:]):
            vec[_bucket(f"{first} {second}", self._dim)] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec

    def config(self) -> dict:
        return {"kind": "hashed_ngram", "dim": self._dim}


def _bucket(token: str, dim: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % dim


def encode_default(text: str, dim: int = 1024) -> np.ndarray:
    """One-off encoding with the default scheme (no memoization)."""
    return HashedNgramEncoder(dim)._encode(text)
