"""Dense and sparse similarity, the hashing encoder, and stable top-k selection."""

from __future__ import annotations

import hashlib
import heapq
import logging
import math
import re
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from functools import lru_cache
from typing import Protocol, TypeVar

import numpy as np

from sciloop.core import UsageError

log = logging.getLogger(__name__)

T = TypeVar("T")
Q = TypeVar("Q")

DenseVector = np.ndarray
SparseVector = dict[str, float]

_TOKEN = re.compile(r"\w+", re.UNICODE)


def dense(values: Iterable[float]) -> DenseVector:
    """Validate and freeze a dense vector."""
    arr = np.array(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise UsageError("dense vectors must be one-dimensional and non-empty")
    if not np.all(np.isfinite(arr)):
        raise UsageError("dense vector entries must be finite")
    arr.setflags(write=False)
    return arr


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class Encoder(Protocol):
    dim: int

    def encode(self, text: str) -> DenseVector: ...


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def hashed_features(tokens: Sequence[str], dim: int) -> DenseVector:
    """Unigram + bigram counts hashed into ``dim`` buckets, l2-normalised.

    Counts are non-negative, so cosine similarity between two hashed vectors
    is always in [0, 1].
    """
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        vec[_bucket(tok, dim)] += 1.0
    for a, b in zip(tokens, tokens[1:]):
        vec[_bucket(f"{a} {b}", dim)] += 1.0
    norm = float(np.sqrt(np.dot(vec, vec)))
    if norm > 0:
        vec /= norm
    vec.setflags(write=False)
    return vec


class HashingEncoder:
    """Deterministic text encoder: hashed token 1- and 2-grams."""

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise UsageError("encoder dim must be positive")
        self.dim = dim
        self._encode = lru_cache(maxsize=65536)(self._encode_uncached)

    def _encode_uncached(self, text: str) -> DenseVector:
        return hashed_features(tokenize(text), self.dim)

    def encode(self, text: str) -> DenseVector:
        return self._encode(text)


def cosine(a: DenseVector, b: DenseVector) -> float:
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        log.debug("cosine with a zero vector; returning 0.0")
        return 0.0
    value = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, value))


def sparse_features(text: str) -> SparseVector:
    return dict(Counter(tokenize(text)))


def sparse_cosine(a: SparseVector, b: SparseVector) -> float:
    if not a or not b:
        return 0.0
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    dot = sum(w * large[t] for t, w in small.items() if t in large)
    if dot == 0:
        return 0.0
    na = math.sqrt(sum(w * w for w in a.values()))
    nb = math.sqrt(sum(w * w for w in b.values()))
    return min(1.0, dot / (na * nb))


def hybrid_sim(q_dense: DenseVector, q_sparse: SparseVector,
               e_dense: DenseVector, e_sparse: SparseVector, alpha: float) -> float:
    """Weighted blend of dense cosine (weight ``alpha``) and sparse cosine."""
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        if q_dense.shape != e_dense.shape:
            raise UsageError("dimension mismatch")
        return cosine(q_dense, e_dense)
    if alpha == 0.0:
        if q_dense.shape != e_dense.shape:
            raise UsageError("dimension mismatch")
        return sparse_cosine(q_sparse, e_sparse)
    return alpha * cosine(q_dense, e_dense) + (1.0 - alpha) * sparse_cosine(q_sparse, e_sparse)


def topk(query: Q, candidates: Sequence[T], k: int,
         sim_fn: Callable[[Q, T], float]) -> list[tuple[T, float]]:
    """The ``k`` most similar candidates, best first.

    Ties keep insertion order, so the result always equals the first ``k``
    items of a stable descending sort.
    """
    if k < 1:
        raise UsageError("k must be >= 1")
    scored = ((-sim_fn(query, c), i) for i, c in enumerate(candidates))
    best = heapq.nsmallest(k, scored)
    return [(candidates[i], -neg) for neg, i in best]
