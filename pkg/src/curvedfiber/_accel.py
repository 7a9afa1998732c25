"""Kernel backend selection: numba-jitted hot loops with a pure-numpy fallback.

Set the environment variable ``CURVEDFIBER_NUMBA=0`` before import to force
the plain-Python/numpy code path (useful for debugging and for benchmarking
the jitted kernels against their fallbacks).
"""

import os

_flag = os.environ.get("CURVEDFIBER_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "off", "no")

NUMBA_ENABLED = False
if _requested:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def maybe_jit(func):
    """Return an njit-compiled version of ``func`` or ``func`` itself.

    Kernels decorated with this must be written in nopython-compatible
    style (plain loops, no fancy indexing) so both paths run identically.
    """
    if NUMBA_ENABLED:
        from numba import njit

        return njit(cache=True)(func)
    return func


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
