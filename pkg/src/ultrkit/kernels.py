"""Hot loops, backed by the compiled extension when it was built.

Set ``ULTRKIT_PURE_PYTHON=1`` to force the pure-Python implementations.
"""

import os

import numpy as np

from ultrkit import _pykernels

BACKEND = "python"
_impl = _pykernels
if not os.environ.get("ULTRKIT_PURE_PYTHON"):
    try:
        from ultrkit import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def hinge_sgd_epoch(X, pairs, order, w, lr, reg, backend=None):
    """Run one SGD epoch of the pairwise hinge loss, updating ``w`` in place.

    ``pairs[p] = (a, b)`` means row ``a`` of ``X`` should outrank row ``b``.
    Returns the number of pairs whose margin was below 1.
    """
    impl = _select(backend)
    return int(
        impl.hinge_sgd_epoch(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(pairs, dtype=np.int64),
            np.ascontiguousarray(order, dtype=np.int64),
            w,
            float(lr),
            float(reg),
        )
    )


def graded_metrics(labels, offsets, k, max_label, backend=None):
    """Per-query nDCG@k and ERR@k for labels listed in display order.

    Query ``q`` owns ``labels[offsets[q]:offsets[q + 1]]``.
    """
    impl = _select(backend)
    return impl.graded_metrics(
        np.ascontiguousarray(labels, dtype=np.int64),
        np.ascontiguousarray(offsets, dtype=np.int64),
        int(k),
        int(max_label),
    )


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from ultrkit import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {backend!r}")
