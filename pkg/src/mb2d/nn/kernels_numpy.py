"""Pure-numpy kernels: 3x3 convolution and factor-2 bilinear resampling.

Layout is NCHW throughout.  Convolutions use kernel 3, padding 1, stride 1
or 2; the forward/backward-weight kernels take input that is already
zero-padded by one pixel on each side.  Convolution is im2col plus a BLAS
matmul, resampling is slicing arithmetic.

Bilinear conventions (half-pixel centers, factor 2, edges clamped):

* upsample, 1 axis:  out[2i] = 0.25*in[i-1] + 0.75*in[i],
  out[2i+1] = 0.75*in[i] + 0.25*in[i+1]
* downsample, 1 axis: out[i] = 0.5*(in[2i] + in[2i+1])  (dims must be even)

The numba backend in :mod:`mb2d.nn.kernels_numba` implements the same
contracts with explicit loops; both must agree within float tolerance.
"""

import numpy as np


def _out_dim(size: int, stride: int) -> int:
    return (size - 1) // stride + 1


def _im2col(xp: np.ndarray, stride: int) -> np.ndarray:
    """(N, Ci, H+2, W+2) padded input -> (N, Ci*9, Ho*Wo) patch matrix."""
    n, ci, hp, wp = xp.shape
    ho = _out_dim(hp - 2, stride)
    wo = _out_dim(wp - 2, stride)
    cols = np.empty((n, ci, 9, ho, wo), xp.dtype)
    k = 0
    for ky in range(3):
        for kx in range(3):
            cols[:, :, k] = xp[
                :, :, ky : ky + (ho - 1) * stride + 1 : stride, kx : kx + (wo - 1) * stride + 1 : stride
            ]
            k += 1
    return cols.reshape(n, ci * 9, ho * wo)


def conv3x3_fwd(xp, w, b, stride):
    n, ci, hp, wp = xp.shape
    co = w.shape[0]
    ho = _out_dim(hp - 2, stride)
    wo = _out_dim(wp - 2, stride)
    cols = _im2col(xp, stride)
    y = np.matmul(w.reshape(co, ci * 9)[None], cols)
    return y.reshape(n, co, ho, wo) + b[None, :, None, None]


def conv3x3_bwd_input(dy, w, stride, h, wd):
    n, co, ho, wo = dy.shape
    ci = w.shape[1]
    dcols = np.matmul(w.reshape(co, ci * 9).T[None], dy.reshape(n, co, ho * wo))
    dcols = dcols.reshape(n, ci, 3, 3, ho, wo)
    dxp = np.zeros((n, ci, h + 2, wd + 2), dy.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[
                :, :, ky : ky + (ho - 1) * stride + 1 : stride, kx : kx + (wo - 1) * stride + 1 : stride
            ] += dcols[:, :, ky, kx]
    return np.ascontiguousarray(dxp[:, :, 1 : 1 + h, 1 : 1 + wd])


def conv3x3_bwd_weight(xp, dy, stride):
    n, co, ho, wo = dy.shape
    ci = xp.shape[1]
    cols = _im2col(xp, stride)
    dy2 = dy.reshape(n, co, ho * wo)
    dw = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0)
    return dw.reshape(co, ci, 3, 3), dy.sum(axis=(0, 2, 3))


def _up1d(x):
    """Upsample the last axis by 2."""
    xl = np.concatenate([x[..., :1], x[..., :-1]], axis=-1)
    xr = np.concatenate([x[..., 1:], x[..., -1:]], axis=-1)
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],), x.dtype)
    out[..., 0::2] = 0.25 * xl + 0.75 * x
    out[..., 1::2] = 0.75 * x + 0.25 * xr
    return out


def _up1d_bwd(dy):
    """Transpose of :func:`_up1d` along the last axis."""
    de = dy[..., 0::2]
    do = dy[..., 1::2]
    dx = 0.75 * (de + do)
    dx[..., :-1] += 0.25 * de[..., 1:]
    dx[..., 0] += 0.25 * de[..., 0]
    dx[..., 1:] += 0.25 * do[..., :-1]
    dx[..., -1] += 0.25 * do[..., -1]
    return dx


def up2_fwd(x):
    y = _up1d(x)
    y = _up1d(y.swapaxes(-1, -2)).swapaxes(-1, -2)
    return np.ascontiguousarray(y)


def up2_bwd(dy):
    dx = _up1d_bwd(dy.swapaxes(-1, -2)).swapaxes(-1, -2)
    dx = _up1d_bwd(dx)
    return np.ascontiguousarray(dx)


def down2_fwd(x):
    return 0.25 * (
        x[..., 0::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 0::2] + x[..., 1::2, 1::2]
    )


def down2_bwd(dy):
    dx = np.repeat(np.repeat(dy, 2, axis=-2), 2, axis=-1)
    dx *= 0.25
    return dx
