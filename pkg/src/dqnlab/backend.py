"""Kernel backend selection.

The numeric kernels in :mod:`dqnlab.kernels` are written once and either
compiled with numba (``@njit``) or run as plain numpy, depending on the
``DQNLAB_BACKEND`` environment variable:

* ``DQNLAB_BACKEND=numba`` - compile kernels with numba (the default when
  numba is importable).
* ``DQNLAB_BACKEND=numpy`` - run the same functions uncompiled.

The choice is made once at import time. Both backends are deterministic for
a fixed seed; they may differ from each other in the last floating-point ulp
because compiled scalar math and numpy's vectorized loops can round
differently.
"""

import os

_VALID = ("numba", "numpy")


def _resolve() -> str:
    requested = os.environ.get("DQNLAB_BACKEND", "").strip().lower()
    if requested and requested not in _VALID:
        raise RuntimeError(
            f"DQNLAB_BACKEND must be one of {_VALID}, got {requested!r}"
        )
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise RuntimeError("DQNLAB_BACKEND=numba but numba is not installed")
        return "numpy"
    return "numba"


ACTIVE = _resolve()


def jit(fn):
    """Compile ``fn`` with numba when the numba backend is active.

    Under the numpy backend this is the identity, so the exact same source
    serves as the fallback implementation.
    """
    if ACTIVE == "numba":
        from numba import njit

        return njit(cache=True, nogil=True)(fn)
    return fn
