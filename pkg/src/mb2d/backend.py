"""Compute-backend selection for the hot numeric kernels.

Two interchangeable implementations exist for every kernel:

* ``numba``: direct loops compiled with ``@njit`` (fast on a single core),
* ``numpy``: vectorized im2col / slicing arithmetic (always available).

The active backend is chosen by the ``MB2D_BACKEND`` environment variable
(``auto`` | ``numba`` | ``numpy``, default ``auto``) and can be switched at
runtime with :func:`set_backend`.  ``auto`` picks numba when it imports.
"""

import os

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_VALID = ("auto", "numba", "numpy")

_backend = None


def _resolve(name: str) -> str:
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}, expected one of {_VALID}")
    if name == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("MB2D_BACKEND=numba requested but numba is not importable")
    return name


def get_backend() -> str:
    """Return the active backend name, ``"numba"`` or ``"numpy"``."""
    global _backend
    if _backend is None:
        _backend = _resolve(os.environ.get("MB2D_BACKEND", "auto"))
    return _backend


def set_backend(name: str) -> str:
    """Select the backend explicitly; returns the resolved name."""
    global _backend
    _backend = _resolve(name)
    return _backend
