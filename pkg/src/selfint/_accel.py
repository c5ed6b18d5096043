"""Optional numba acceleration.

Set ``SELFINT_DISABLE_NUMBA=1`` (or ``SELFINT_BACKEND=numpy``) before import to
force the pure-numpy kernels.  Both paths consume the same pre-drawn random
numbers, so chains are identical up to floating-point rounding.
"""
import os

_flag = os.environ.get("SELFINT_DISABLE_NUMBA", "").strip().lower()
_backend = os.environ.get("SELFINT_BACKEND", "").strip().lower()

USE_NUMBA = not (_flag in ("1", "true", "yes") or _backend == "numpy")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if not USE_NUMBA:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


BACKEND = "numba" if USE_NUMBA else "numpy"
