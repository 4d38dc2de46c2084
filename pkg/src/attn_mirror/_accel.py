"""Numba switch.

Kernels are compiled with numba's ``njit`` unless ``ATTN_MIRROR_DISABLE_NUMBA``
is set to a truthy value (or numba is missing), in which case the pure-numpy
implementations in :mod:`attn_mirror.kernels` are used instead.
"""

import os

_FLAG = os.environ.get("ATTN_MIRROR_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no", "off")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def deco(fn):
            return fn

        return deco


def use_numba():
    """True when the compiled kernels are active for this process."""
    return HAVE_NUMBA
