# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled cosine top-k scan kernels.

Fuses the dot-product pass with a bounded selection heap so the full score
array is never sorted. Accumulation is float64 to match the NumPy fallback.
Ties on equal score break toward the lower row id.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline bint _beats(double s_new, long id_new, double s_old, long id_old) nogil:
    # True when (s_new, id_new) ranks strictly ahead of (s_old, id_old)
    # under score-descending, id-ascending order.
    if s_new != s_old:
        return s_new > s_old
    return id_new < id_old


cdef void _sift_down(double* hs, long* hi, Py_ssize_t size, Py_ssize_t pos) nogil:
    # Min-heap on the same order: root is the weakest kept entry.
    cdef Py_ssize_t child
    cdef double ts
    cdef long ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            return
        if child + 1 < size and _beats(hs[child], hi[child], hs[child + 1], hi[child + 1]):
            child += 1
        if _beats(hs[pos], hi[pos], hs[child], hi[child]):
            ts = hs[pos]; hs[pos] = hs[child]; hs[child] = ts
            ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
            pos = child
        else:
            return


cdef void _scan_rows(const float[:, ::1] matrix, const long* rows, Py_ssize_t n_rows,
                     const double[::1] query, Py_ssize_t k,
                     double* heap_s, long* heap_i, Py_ssize_t* out_size) nogil:
    cdef Py_ssize_t dim = matrix.shape[1]
    cdef Py_ssize_t size = 0
    cdef Py_ssize_t r, j
    cdef long row_id
    cdef double acc
    for r in range(n_rows):
        row_id = rows[r] if rows != NULL else r
        acc = 0.0
        for j in range(dim):
            acc += <double> matrix[row_id, j] * query[j]
        if size < k:
            heap_s[size] = acc
            heap_i[size] = row_id
            size += 1
            if size == k:
                # heapify
                for j in range(size // 2 - 1, -1, -1):
                    _sift_down(heap_s, heap_i, size, j)
        elif _beats(acc, row_id, heap_s[0], heap_i[0]):
            heap_s[0] = acc
            heap_i[0] = row_id
            _sift_down(heap_s, heap_i, size, 0)
    if size < k:
        for j in range(size // 2 - 1, -1, -1):
            _sift_down(heap_s, heap_i, size, j)
    out_size[0] = size


cdef _finalize(double* heap_s, long* heap_i, Py_ssize_t size):
    ids = np.empty(size, dtype=np.int64)
    scores = np.empty(size, dtype=np.float64)
    cdef long[::1] ids_v = ids
    cdef double[::1] scores_v = scores
    cdef Py_ssize_t pos = size
    cdef double ts
    cdef long ti
    # Repeatedly pop the weakest entry to emit ascending, filling from the end.
    while pos > 0:
        pos -= 1
        ids_v[pos] = heap_i[0]
        scores_v[pos] = heap_s[0]
        heap_s[0] = heap_s[pos]
        heap_i[0] = heap_i[pos]
        _sift_down(heap_s, heap_i, pos, 0)
    return ids, scores


def topk_dot(const float[:, ::1] matrix, query, Py_ssize_t k):
    """Top-k rows of ``matrix`` by dot product with ``query``."""
    cdef cnp.ndarray[double, ndim=1] q = np.ascontiguousarray(query, dtype=np.float64)
    if k > matrix.shape[0]:
        k = matrix.shape[0]
    if k <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] heap_s = np.empty(k, dtype=np.float64)
    cdef cnp.ndarray[long, ndim=1] heap_i = np.empty(k, dtype=np.int64)
    cdef Py_ssize_t size = 0
    _scan_rows(matrix, NULL, matrix.shape[0], q, k,
               <double*> heap_s.data, <long*> heap_i.data, &size)
    return _finalize(<double*> heap_s.data, <long*> heap_i.data, size)


def topk_dot_subset(const float[:, ::1] matrix, rows, query, Py_ssize_t k):
    """Same as :func:`topk_dot` but restricted to the given row ids."""
    cdef cnp.ndarray[long, ndim=1] row_arr = np.ascontiguousarray(rows, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] q = np.ascontiguousarray(query, dtype=np.float64)
    if k > row_arr.shape[0]:
        k = row_arr.shape[0]
    if k <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] heap_s = np.empty(k, dtype=np.float64)
    cdef cnp.ndarray[long, ndim=1] heap_i = np.empty(k, dtype=np.int64)
    cdef Py_ssize_t size = 0
    _scan_rows(matrix, <long*> row_arr.data, row_arr.shape[0], q, k,
               <double*> heap_s.data, <long*> heap_i.data, &size)
    return _finalize(<double*> heap_s.data, <long*> heap_i.data, size)
