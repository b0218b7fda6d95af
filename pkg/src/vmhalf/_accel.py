"""JIT dispatch layer.

Hot numeric kernels throughout the package are decorated with ``njit``
imported from here.  By default this is numba's ``njit``; setting the
environment variable ``VMHALF_NO_NUMBA=1`` (or running without numba
installed) selects a pure-NumPy/Python fallback in which the decorators
are no-ops.  Both paths compute identical results; ``benchmarks/``
compares their speed.
"""

import os

NUMBA_DISABLED = os.environ.get("VMHALF_NO_NUMBA", "0") not in ("", "0", "false")

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled via VMHALF_NO_NUMBA")
    from numba import njit, prange

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised via env flag in benchmarks
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap

    prange = range


def set_threads(n):
    """Cap worker threads used by jitted parallel loops."""
    if NUMBA_ENABLED and n is not None and n > 0:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
