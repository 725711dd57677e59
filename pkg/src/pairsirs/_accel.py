"""Numba switch for the hot kernels.

Every kernel in the package is written once, in scalar-loop style that runs
both under ``numba.njit`` and as ordinary Python on numpy arrays.  Setting
``PAIRSIRS_DISABLE_NUMBA=1`` (or running without numba installed) selects
the pure-numpy path; the two paths are expected to agree to rounding.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested():
    return os.environ.get("PAIRSIRS_DISABLE_NUMBA", "0").strip().lower() in _FALSY


try:
    import numba
except ImportError:  # pragma: no cover - numba ships in the dev environment
    numba = None

NUMBA_ENABLED = numba is not None and _numba_requested()


def kernel(fn):
    """Compile ``fn`` with ``numba.njit`` when acceleration is on."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def is_compiled(fn):
    """True if ``fn`` is a numba dispatcher that other kernels can call."""
    return NUMBA_ENABLED and isinstance(fn, numba.core.registry.CPUDispatcher)


def python_impl(fn):
    """The uncompiled body of a kernel (identity in fallback mode)."""
    return getattr(fn, "py_func", fn)
