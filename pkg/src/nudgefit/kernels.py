"""Backend selection for the hot Lorenz 96 kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Setting ``NUDGEFIT_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _l96_kernels_py as python_backend

compiled_backend = None
if os.environ.get("NUDGEFIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _l96_kernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "cython" if compiled_backend is not None else "python"

l96_tendency = backend.l96_tendency
l96_coupled_rk4 = backend.l96_coupled_rk4
