"""Pick the compiled kernels when built, else the pure-Python fallback.

Set ``TACO_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("TACO_PURE_PYTHON"):
    from . import _kernels_py as kernels

    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as kernels

        BACKEND = "python"

__all__ = ["BACKEND", "kernels"]
