"""Scan-kernel backend selection.

The compiled extension is preferred when present; ``RETAG_KERNEL=numpy`` or
``RETAG_KERNEL=cython`` overrides the choice (the latter raises if the
extension is missing). Both backends implement the same contract:

    topk_dot(matrix, query, k)          -> (ids int64, scores float64)
    topk_dot_subset(matrix, rows, query, k)

with scores descending and ties on equal score broken by ascending id.
"""

import os

from . import _scan_np

_forced = os.environ.get("RETAG_KERNEL", "").strip().lower()

if _forced == "numpy":
    _impl = _scan_np
    BACKEND = "numpy"
else:
    try:
        from . import _scan as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _scan_np
        BACKEND = "numpy"

topk_dot = _impl.topk_dot
topk_dot_subset = _impl.topk_dot_subset


def available_backends():
    """Names of the backends importable in this environment."""
    names = ["numpy"]
    try:
        from . import _scan  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name: str):
    """Return the kernel module for an explicit backend name."""
    if name == "numpy":
        return _scan_np
    if name == "cython":
        from . import _scan

        return _scan
    raise ValueError(f"unknown kernel backend: {name!r}")
