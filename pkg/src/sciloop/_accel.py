"""Numba acceleration switch.

The hot kernels (expression-tape evaluation, damped least squares, the
regulatory-network integrator) ship in two variants: an ``@njit`` build and a
pure-numpy build. ``SCILOOP_DISABLE_NUMBA=1`` forces the numpy path; otherwise
numba is used when importable. ``benchmarks/kernel_bench.py`` compares the two.
"""

import os

_DISABLED = os.environ.get("SCILOOP_DISABLE_NUMBA", "0") == "1"

if not _DISABLED:
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

if not HAVE_NUMBA:
    def njit(*args, **kwargs):  # noqa: D103 - decorator shim, numpy fallback path
        def decorate(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return decorate


def backend_name() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
