"""Backend dispatch for the array kernels.

Imports the numpy kernels eagerly and the numba ones lazily, so running with
``MB2D_BACKEND=numpy`` never pays JIT compilation cost.
"""

import numpy as np

from mb2d import backend
from mb2d.nn import kernels_numpy

_numba_mod = None


def _kernels():
    global _numba_mod
    if backend.get_backend() == "numpy":
        return kernels_numpy
    if _numba_mod is None:
        from mb2d.nn import kernels_numba

        _numba_mod = kernels_numba
    return _numba_mod


def pad1(x: np.ndarray) -> np.ndarray:
    """Zero-pad H and W by one pixel (conv input layout)."""
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


def conv3x3_fwd(xp, w, b, stride):
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    return _kernels().conv3x3_fwd(xp, w, b, stride)


def conv3x3_bwd_input(dy, w, stride, h, wd):
    return _kernels().conv3x3_bwd_input(dy, w, stride, h, wd)


def conv3x3_bwd_weight(xp, dy, stride):
    return _kernels().conv3x3_bwd_weight(xp, dy, stride)


def up2_fwd(x):
    return _kernels().up2_fwd(x)


def up2_bwd(dy):
    return _kernels().up2_bwd(dy)


def down2_fwd(x):
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError(f"down2 needs even spatial dims, got {x.shape[-2:]}")
    return _kernels().down2_fwd(x)


def down2_bwd(dy):
    return _kernels().down2_bwd(dy)
