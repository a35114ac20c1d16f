"""Hot-kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``EDGEVTP_PURE_PYTHON=1`` to force the fallback. Both back ends are
always importable by name (``compiled`` may be None) so benchmarks and
tests can compare them directly.
"""
import os

import numpy as np

from . import _pykernels as python

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("EDGEVTP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    backend = compiled
    BACKEND = "compiled"
else:
    backend = python
    BACKEND = "python"


def _resolve(impl):
    """None -> active backend; "compiled"/"python" by name; a module passes through."""
    if impl is None:
        return backend
    if isinstance(impl, str):
        mod = {"compiled": compiled, "python": python}.get(impl, False)
        if mod is False:
            raise ValueError(f"unknown kernel implementation {impl!r}")
        if mod is None:
            raise RuntimeError("compiled kernels are not built")
        return mod
    return impl


def knn_radius(pos, r, k, use_grid=True, impl=None):
    mod = _resolve(impl)
    k = int(min(k, np.iinfo(np.int64).max // 4)) if np.isfinite(k) else np.iinfo(np.int32).max
    return mod.knn_radius(np.ascontiguousarray(pos, dtype=np.float64), float(r), k, use_grid)


def bezier_eval(basis, ctrl, impl=None):
    mod = _resolve(impl)
    return mod.bezier_eval(np.ascontiguousarray(basis, dtype=np.float64),
                           np.ascontiguousarray(ctrl, dtype=np.float64))
