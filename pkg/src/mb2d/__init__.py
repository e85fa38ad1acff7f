"""Multi-blur-to-deblur (MB2D) video deblurring at desk scale.

The pipeline has three parts:

* blur synthesis: average windows of high-frame-rate sharp frames into
  blurred frames of increasing exposure, all anchored at one reference frame;
* a recurrent multi-blurring network (MBRNN) that predicts the longer
  exposures from the base-exposure frame and its two neighbors;
* a multi-scale deblurring network (MSDR) that restores the sharp frame from
  the input, the predicted longer exposures, and the recurrent feature maps.

Everything runs on numpy arrays; the hot kernels have numba-compiled
implementations with a pure-numpy fallback (see :mod:`mb2d.backend`).
"""

__version__ = "0.1.0"

from mb2d.backend import get_backend, set_backend

__all__ = ["get_backend", "set_backend", "__version__"]
