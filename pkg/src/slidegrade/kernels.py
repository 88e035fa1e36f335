"""Select the compiled kernels when available, else the pure-Python ones."""

import os

from . import _purepy

BACKEND = "python"

if os.environ.get("SLIDEGRADE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _purepy
else:
    _impl = _purepy

kruskal_forest = _impl.kruskal_forest
stable_argsort_bounded = _impl.stable_argsort_bounded

__all__ = ["BACKEND", "kruskal_forest", "stable_argsort_bounded"]
