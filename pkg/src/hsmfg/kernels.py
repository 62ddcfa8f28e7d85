"""Kernel backend selection.

The compiled extension is preferred when present; the numpy twin is selected
otherwise, or when HSMFG_PURE_PYTHON is set (useful for benchmarking and for
debugging the compiled path against the reference).
"""

import os

if os.environ.get("HSMFG_PURE_PYTHON"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

rk4_riccati_sweep = _impl.rk4_riccati_sweep
