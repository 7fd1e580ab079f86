"""Backend selection for the hot kernels.

Set ``DAMPWAVE_BACKEND=numpy`` to force the pure-numpy path; the default is
numba when it can be imported. Both drivers stay importable so they can be
benchmarked against each other in one process.
"""
import os

_requested = os.environ.get("DAMPWAVE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"DAMPWAVE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

BACKEND = "numba" if (_requested == "numba" and NUMBA_AVAILABLE) else "numpy"


def jit(func):
    """Return a numba-compiled copy of ``func``, or None without numba."""
    if not NUMBA_AVAILABLE:
        return None
    from numba import njit

    return njit(cache=True)(func)


def jit_with(func, **bindings):
    """Compile ``func`` with some of its globals replaced by compiled helpers.

    Shared step math calls other shared helpers by name; inside numba those
    names must refer to dispatchers rather than plain Python functions.
    """
    if not NUMBA_AVAILABLE:
        return None
    import types

    from numba import njit

    scope = dict(func.__globals__)
    scope.update(bindings)
    clone = types.FunctionType(func.__code__, scope, func.__name__, func.__defaults__, func.__closure__)
    clone.__module__ = func.__module__
    clone.__qualname__ = func.__qualname__
    return njit(cache=True)(clone)
