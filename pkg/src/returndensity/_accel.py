"""Optional numba acceleration.

Kernels are written once in plain Python/numpy and decorated with :func:`jit`.
Set ``RETURNDENSITY_DISABLE_NUMBA=1`` to run the pure-Python/numpy path, e.g.
to debug a kernel or to benchmark the two paths against each other.
"""
import os

DISABLE_ENV = "RETURNDENSITY_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False


def _requested():
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and _requested()


def jit(fn=None, **kwargs):
    """``numba.njit`` when acceleration is on, identity otherwise."""

    def wrap(f):
        if USE_NUMBA:
            return numba.njit(cache=True, **kwargs)(f)
        return f

    if fn is None:
        return wrap
    return wrap(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
