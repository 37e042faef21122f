"""Numba dispatch for hot numeric kernels.

Kernels are written once as plain array functions and compiled with
``numba.njit`` when available.  Setting the environment variable
``QUADRETARGET_DISABLE_NUMBA=1`` (checked at import time) keeps every
kernel on the pure-numpy path; results are identical either way because
both paths execute the same function body.

The compiled dispatcher keeps the original function on ``.py_func``,
which is what ``benchmarks/bench_accel.py`` uses to time both paths.
"""

import os

_FALSY = ("", "0", "false", "no")


def _numba_requested() -> bool:
    return os.environ.get("QUADRETARGET_DISABLE_NUMBA", "0").strip().lower() in _FALSY


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_ENABLED = _numba is not None and _numba_requested()


def maybe_njit(func=None, **options):
    """Return ``numba.njit(func)`` when enabled, else ``func`` unchanged."""

    def wrap(f):
        if not NUMBA_ENABLED:
            f.py_func = f
            return f
        options.setdefault("cache", True)
        return _numba.njit(**options)(f)

    if func is None:
        return wrap
    return wrap(func)
