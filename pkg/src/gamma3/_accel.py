"""JIT gating for the hot numeric kernels.

Every compute kernel in this package is written in numba's nopython subset
(scalar loops, math.* calls, preallocated output arrays) and decorated with
the ``njit`` exported here.  Setting the environment variable
``GAMMA3_NUMBA=0`` before import replaces the decorator with an identity so
the same source runs as plain Python/NumPy, which is slower but convenient
for debugging and for machines without a working numba install.

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

import os

_flag = os.environ.get("GAMMA3_NUMBA", "1").strip().lower()
JIT_ENABLED = _flag not in {"0", "false", "off", "no"}

if JIT_ENABLED:
    try:
        from numba import njit, prange
        from numba import get_num_threads, set_num_threads
    except ImportError:
        JIT_ENABLED = False

if not JIT_ENABLED:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrapper(func):
            return func

        return wrapper

    def prange(*args):
        return range(*args)

    def set_num_threads(n):
        pass

    def get_num_threads():
        return 1


def set_worker_threads(n):
    """Cap the worker-thread pool; results never depend on this value.

    Values above the platform's thread budget are clamped rather than
    rejected, since the flag is a cap, not a demand."""
    if n is None:
        return
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if JIT_ENABLED:
        from numba import config as _numba_config

        set_num_threads(min(n, _numba_config.NUMBA_NUM_THREADS))
