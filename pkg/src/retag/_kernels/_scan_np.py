"""NumPy implementation of the cosine top-k scan kernels.

Selected at import time when the compiled extension is unavailable (or when
``RETAG_KERNEL=numpy`` forces it). Scores accumulate in float64; ties on
equal score break toward the lower row id.
"""

from __future__ import annotations

import numpy as np


def _select_topk(scores: np.ndarray, ids: np.ndarray, k: int):
    k = min(k, scores.shape[0])
    # lexsort: primary key last. Sort by score descending, then id ascending.
    order = np.lexsort((ids, -scores))[:k]
    return ids[order].astype(np.int64), scores[order]


def topk_dot(matrix: np.ndarray, query: np.ndarray, k: int):
    """Top-k rows of ``matrix`` by dot product with ``query``.

    Returns (ids, scores) with scores float64, descending, id-ascending ties.
    """
    scores = matrix.astype(np.float64, copy=False) @ query.astype(np.float64, copy=False)
    return _select_topk(scores, np.arange(matrix.shape[0], dtype=np.int64), k)


def topk_dot_subset(matrix: np.ndarray, rows: np.ndarray, query: np.ndarray, k: int):
    """Same as :func:`topk_dot` but restricted to the given row ids."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    sub = matrix[rows].astype(np.float64, copy=False)
    scores = sub @ query.astype(np.float64, copy=False)
    return _select_topk(scores, rows, k)
