"""Kernels for evaluating quadratic constraint systems.

The compiled extension is used when it was built; otherwise the numpy
fallback.  Set ``FCOPF_ENGINE_PURE_PYTHON=1`` to force the fallback.
"""
import os
from types import ModuleType

from . import _fallback


def _load_compiled() -> ModuleType | None:
    try:
        from . import _qkernels
    except ImportError:
        return None
    return _qkernels


_compiled = _load_compiled()

if _compiled is not None and not os.environ.get("FCOPF_ENGINE_PURE_PYTHON"):
    BACKEND = "cython"
    _active = _compiled
else:
    BACKEND = "numpy"
    _active = _fallback

quad_residual = _active.quad_residual
quad_jacobian = _active.quad_jacobian
quad_hessian = _active.quad_hessian


def backend(name: str) -> ModuleType:
    """Kernel module by name, ``"cython"`` or ``"numpy"``."""
    if name == "numpy":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(name)


def compiled_available() -> bool:
    return _compiled is not None
