"""Hot-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
fallback is.  Setting ``FDFA_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("FDFA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place fused Adam step on contiguous float64 arrays of any shape."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    _impl.adam_update(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                      lr, beta1, beta2, eps, bc1, bc2)


def fg_moments(*args):
    return _impl.fg_moments(*args)


def implementation(name: str):
    """Kernel module by backend name, for benchmarks and parity tests."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
