"""Hot loops of the correlator network, with a compiled and a numpy backend.

The compiled extension is used when it is importable, unless the environment
variable ``HYBRID_CCNN_PURE_PYTHON`` is set to a non-empty value. Both
backends expose the same four functions and agree to round-off.
"""
import os

import numpy as np

from . import _pykernels

_FUNCS = ("correlate_valid", "correlate_filter_grad",
          "pooled_correlators", "pooled_correlators_backward")

_compiled = None
if not os.environ.get("HYBRID_CCNN_PURE_PYTHON"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def available_backends():
    return ("cython", "numpy") if _compiled is not None else ("numpy",)


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = name or BACKEND
    if name == "numpy":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def correlate_valid(x, k, backend=None):
    return get_backend(backend).correlate_valid(_c(x), _c(k))


def correlate_filter_grad(x, g, fh, fw, backend=None):
    return get_backend(backend).correlate_filter_grad(_c(x), _c(g), fh, fw)


def pooled_correlators(x, k, w, order, backend=None):
    return get_backend(backend).pooled_correlators(_c(x), _c(k), _c(w), int(order))


def pooled_correlators_backward(x, k, w, dfeat, backend=None):
    return get_backend(backend).pooled_correlators_backward(_c(x), _c(k), _c(w), _c(dfeat))
