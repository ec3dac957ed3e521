"""Vector primitives shared by every other module.

Embeddings are plain ``numpy.ndarray`` vectors stored in float32; all
accumulation (dot products, means) runs in float64 so that results are stable
regardless of input length.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, EmptyListError, ZeroVectorError

ZERO_NORM_EPS = 1e-12


def as_embedding(values) -> np.ndarray:
    """Coerce a sequence to a float32 1-D vector, validating finiteness."""
    v = np.asarray(values, dtype=np.float32)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatchError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ZeroVectorError("vector contains non-finite values")
    return v


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm, preserving direction.

    Raises ZeroVectorError if the norm is below 1e-12.
    """
    v = as_embedding(v)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm < ZERO_NORM_EPS:
        raise ZeroVectorError("cannot normalize a zero vector")
    return (v / np.float32(norm)).astype(np.float32)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors: dot(a,b) / (|a| |b|)."""
    a = as_embedding(a)
    b = as_embedding(b)
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatchError(f"dims differ: {a.shape[0]} vs {b.shape[0]}")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    na = float(np.linalg.norm(a64))
    nb = float(np.linalg.norm(b64))
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        raise ZeroVectorError("cosine similarity of a zero vector is undefined")
    return float(np.dot(a64, b64) / (na * nb))


def mean_embedding(vectors) -> np.ndarray:
    """Componentwise arithmetic mean of a non-empty list of vectors.

    The result is intentionally not re-normalized; cosine scoring is
    scale-invariant and callers that need a unit vector normalize themselves.
    """
    vectors = list(vectors)
    if not vectors:
        raise EmptyListError("mean of an empty list of embeddings")
    first = as_embedding(vectors[0])
    acc = np.zeros(first.shape[0], dtype=np.float64)
    for v in vectors:
        v = as_embedding(v)
        if v.shape[0] != first.shape[0]:
            raise DimensionMismatchError(f"dims differ: {v.shape[0]} vs {first.shape[0]}")
        acc += v.astype(np.float64)
    return (acc / len(vectors)).astype(np.float32)
