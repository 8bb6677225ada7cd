"""Backend selection for the loop-bound kernels.

The compiled extension is used when it was built; otherwise the pure-Python
fallback is imported. Set ``MICROFORMER_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

if os.environ.get("MICROFORMER_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

j2_path = _impl.j2_path
first_free = _impl.first_free
two_point_direct = _impl.two_point_direct

__all__ = ["BACKEND", "j2_path", "first_free", "two_point_direct"]
