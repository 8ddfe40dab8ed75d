"""Hot-loop backend selection.

The compiled extension is used when it was built; otherwise the NumPy
fallback is loaded. Setting ``INFOLEAK_PURE_PYTHON=1`` forces the
fallback, which the test-suite uses to cross-check both backends.
"""

import os

from . import _pykernels

if os.environ.get("INFOLEAK_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

subset_sup = _impl.subset_sup
gauss_log_mean = _impl.gauss_log_mean

__all__ = ["BACKEND", "subset_sup", "gauss_log_mean"]
