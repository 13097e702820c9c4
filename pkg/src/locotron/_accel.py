"""Numba acceleration switch.

Hot numeric kernels are decorated with ``maybe_njit``. By default they are
compiled with numba's ``@njit(cache=True)``. Setting the environment variable
``LOCOTRON_DISABLE_NUMBA=1`` (or numba's own ``NUMBA_DISABLE_JIT=1``) selects
the pure-numpy fallback path: the same function bodies run as plain Python.
Kernels are written so both paths execute identical floating-point operation
sequences; ``benchmarks/bench_sim.py`` compares the two.
"""

import os

NUMBA_ENABLED = os.environ.get("LOCOTRON_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        import numba

        # no fastmath: IEEE semantics keep both paths bit-comparable and NaN
        # divergence detection intact
        def maybe_njit(func):
            return numba.njit(cache=True)(func)

    except ImportError:
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def maybe_njit(func):
        return func
