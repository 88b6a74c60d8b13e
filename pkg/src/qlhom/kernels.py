"""Element kernels: compiled extension when built, NumPy fallback otherwise.

Set ``QLHOM_PURE_PYTHON=1`` to force the fallback.
"""
import os

BACKEND = "python"

if os.environ.get("QLHOM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._kernels import (chol_backward, chol_forward, chol_numeric,  # noqa: F401
                               chol_symbolic, element_fluxes, group_sum, local_stiffness)
        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    from ._kernels_py import (chol_backward, chol_forward, chol_numeric,  # noqa: F401
                              chol_symbolic, element_fluxes, group_sum, local_stiffness)

__all__ = ["BACKEND", "chol_backward", "chol_forward", "chol_numeric", "chol_symbolic",
           "element_fluxes", "group_sum", "local_stiffness"]
