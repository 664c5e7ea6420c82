"""Numba/numpy backend selection for the hot kernels.

The simulator step loop and the per-sample training loop dominate runtime.
Both have two implementations: a numba ``@njit`` kernel and a vectorized
pure-numpy fallback. Selection order:

1. ``ASTROGATE_BACKEND`` environment variable (``numba`` or ``numpy``),
2. otherwise ``numba`` when importable, else ``numpy``.

``benchmarks/backend_bench.py`` times the two paths against each other.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_VALID = ("numba", "numpy")


def _resolve() -> str:
    choice = os.environ.get("ASTROGATE_BACKEND", "").strip().lower()
    if choice and choice not in _VALID:
        raise ValueError(
            f"ASTROGATE_BACKEND must be one of {_VALID}, got {choice!r}"
        )
    if choice == "numba" and numba is None:
        raise RuntimeError("ASTROGATE_BACKEND=numba but numba is not importable")
    if not choice:
        choice = "numba" if numba is not None else "numpy"
    return choice


_BACKEND = _resolve()

# Shared options for every kernel. fastmath stays off: reassociation would
# break cross-run reproducibility of cached trajectories.
JIT_OPTIONS = {"cache": True, "nogil": True}


def active_backend() -> str:
    """Name of the backend the kernels dispatch to (``numba`` or ``numpy``)."""
    return _BACKEND


def using_numba() -> bool:
    return _BACKEND == "numba"


def jit(func):
    """Compile ``func`` with numba when that backend is active, else identity.

    Applied to kernels written in loop style that are only ever called on the
    numba path; the numpy path has separate vectorized implementations.
    """
    if numba is None:
        return func
    return numba.njit(**JIT_OPTIONS)(func)
