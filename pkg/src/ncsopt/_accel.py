"""Backend selection for the hot loops.

Numba is used when importable unless ``NCSOPT_DISABLE_NUMBA`` is set to a
truthy value, in which case the vectorized numpy implementations run instead.
The flag is read on every dispatch so it can be toggled at runtime.
"""
import os

ENV_FLAG = "NCSOPT_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None


def numba_enabled() -> bool:
    flag = os.environ.get(ENV_FLAG, "").strip().lower()
    return HAVE_NUMBA and flag not in ("1", "true", "yes", "on")


def backend_name() -> str:
    return "numba" if numba_enabled() else "numpy"


def njit(fn):
    """``numba.njit(cache=True)`` when available, else ``None``."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True)(fn)
