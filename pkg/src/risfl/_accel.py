"""JIT switch for the numeric kernels.

Kernels are written in a numpy subset that numba can compile. Setting
``RISFL_NUMBA=0`` in the environment (before import) runs them as plain
numpy functions instead. When numba is enabled the original Python
function stays reachable through the dispatcher's ``py_func`` attribute,
which the tests and the benchmark use to compare both paths.
"""
import os

_FALSY = {"0", "false", "no", "off"}

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("RISFL_NUMBA", "1").strip().lower() not in _FALSY


def njit(func=None, **kwargs):
    """``numba.njit`` when enabled, identity otherwise."""
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)

    def wrap(f):
        if USE_NUMBA:
            return numba.njit(**opts)(f)
        f.py_func = f
        return f

    if func is None:
        return wrap
    return wrap(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
