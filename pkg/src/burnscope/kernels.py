"""Hot-loop kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``BURNSCOPE_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("BURNSCOPE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

majority_filter = _impl.majority_filter
nnls_batch = _impl.nnls_batch
window_stats = _impl.window_stats

__all__ = ["BACKEND", "majority_filter", "nnls_batch", "window_stats"]
