"""Switch between numba-compiled kernels and their pure-numpy twins.

Set ``ADPO_LAB_NUMBA=0`` to force the numpy path (also used automatically
when numba cannot be imported).
"""

import os

_flag = os.environ.get("ADPO_LAB_NUMBA", "1").strip().lower()

try:
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _njit = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is importable."""
    if not HAS_NUMBA:
        return fn
    return _njit(cache=True, nogil=True)(fn)
