"""Backend switch for the compiled kernels.

Set ``QUENCHLAB_NUMBA=0`` to force the pure-numpy code paths. The flag is read
once at import time.
"""

import os

_FLAG = os.environ.get("QUENCHLAB_NUMBA", "1").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def deco(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return deco


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
