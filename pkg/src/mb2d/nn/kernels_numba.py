"""Numba-compiled kernels, loop-for-loop equivalents of kernels_numpy.

Inner loops run over contiguous rows with a local accumulator so LLVM can
vectorize them; this is 5-10x faster than the numpy im2col path on one core.
``fastmath`` only relaxes summation order, which the cross-backend tests
cover with float tolerances.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, fastmath=True, nogil=True)


@njit(**_JIT)
def conv3x3_fwd(xp, w, b, stride):
    n, ci, hp, wp = xp.shape
    co = w.shape[0]
    h = hp - 2
    wd = wp - 2
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    out = np.empty((n, co, ho, wo), xp.dtype)
    acc = np.empty(wo, xp.dtype)
    for ni in range(n):
        for c in range(co):
            for y in range(ho):
                iy0 = y * stride
                for i in range(wo):
                    acc[i] = b[c]
                for cc in range(ci):
                    for ky in range(3):
                        row = xp[ni, cc, iy0 + ky]
                        w0 = w[c, cc, ky, 0]
                        w1 = w[c, cc, ky, 1]
                        w2 = w[c, cc, ky, 2]
                        if stride == 1:
                            for i in range(wo):
                                acc[i] += w0 * row[i] + w1 * row[i + 1] + w2 * row[i + 2]
                        else:
                            for i in range(wo):
                                j = 2 * i
                                acc[i] += w0 * row[j] + w1 * row[j + 1] + w2 * row[j + 2]
                for i in range(wo):
                    out[ni, c, y, i] = acc[i]
    return out


@njit(**_JIT)
def conv3x3_bwd_input(dy, w, stride, h, wd):
    n, co, ho, wo = dy.shape
    ci = w.shape[1]
    dxp = np.zeros((n, ci, h + 2, wd + 2), dy.dtype)
    for ni in range(n):
        for cc in range(ci):
            for c in range(co):
                for ky in range(3):
                    for kx in range(3):
                        wv = w[c, cc, ky, kx]
                        for y in range(ho):
                            drow = dxp[ni, cc, y * stride + ky]
                            dyrow = dy[ni, c, y]
                            if stride == 1:
                                for i in range(wo):
                                    drow[i + kx] += wv * dyrow[i]
                            else:
                                for i in range(wo):
                                    drow[2 * i + kx] += wv * dyrow[i]
    return dxp[:, :, 1 : 1 + h, 1 : 1 + wd].copy()


@njit(**_JIT)
def conv3x3_bwd_weight(xp, dy, stride):
    # One pass over (image, row) keeps the touched xp/dy rows L1-resident
    # across the channel loops; the naive tap-outer order re-reads every
    # feature map co*ci*9 times and thrashes cache beyond ~64x64.
    n, co, ho, wo = dy.shape
    ci = xp.shape[1]
    zero = xp.dtype.type(0)
    dw = np.zeros((co, ci, 3, 3), xp.dtype)
    db = np.zeros(co, xp.dtype)
    for ni in range(n):
        for y in range(ho):
            for c in range(co):
                dyrow = dy[ni, c, y]
                accb = zero
                for i in range(wo):
                    accb += dyrow[i]
                db[c] += accb
                for cc in range(ci):
                    for ky in range(3):
                        xrow = xp[ni, cc, y * stride + ky]
                        for kx in range(3):
                            acc = zero
                            if stride == 1:
                                for i in range(wo):
                                    acc += xrow[i + kx] * dyrow[i]
                            else:
                                for i in range(wo):
                                    acc += xrow[2 * i + kx] * dyrow[i]
                            dw[c, cc, ky, kx] += acc
    return dw, db


@njit(**_JIT)
def up2_fwd(x):
    n, c, h, w = x.shape
    out = np.empty((n, c, 2 * h, 2 * w), x.dtype)
    for ni in range(n):
        for cc in range(c):
            for y in range(2 * h):
                iy = y // 2
                if y % 2 == 0:
                    ya, yb = max(iy - 1, 0), iy
                else:
                    ya, yb = iy, min(iy + 1, h - 1)
                wa = x.dtype.type(0.25)
                wb = x.dtype.type(0.75)
                if y % 2 == 1:
                    wa, wb = wb, wa
                ra = x[ni, cc, ya]
                rb = x[ni, cc, yb]
                orow = out[ni, cc, y]
                for i in range(w):
                    v = wa * ra[i] + wb * rb[i]
                    il = i - 1 if i > 0 else 0
                    ir = i + 1 if i < w - 1 else w - 1
                    vl = wa * ra[il] + wb * rb[il]
                    vr = wa * ra[ir] + wb * rb[ir]
                    orow[2 * i] = 0.25 * vl + 0.75 * v
                    orow[2 * i + 1] = 0.75 * v + 0.25 * vr
    return out


@njit(**_JIT)
def up2_bwd(dy):
    n, c, h2, w2 = dy.shape
    h = h2 // 2
    w = w2 // 2
    dx = np.zeros((n, c, h, w), dy.dtype)
    for ni in range(n):
        for cc in range(c):
            for y in range(h2):
                iy = y // 2
                if y % 2 == 0:
                    ya, yb = max(iy - 1, 0), iy
                    wya, wyb = 0.25, 0.75
                else:
                    ya, yb = iy, min(iy + 1, h - 1)
                    wya, wyb = 0.75, 0.25
                dyrow = dy[ni, cc, y]
                ra = dx[ni, cc, ya]
                rb = dx[ni, cc, yb]
                for i in range(w):
                    ge = dyrow[2 * i]
                    go = dyrow[2 * i + 1]
                    il = i - 1 if i > 0 else 0
                    ir = i + 1 if i < w - 1 else w - 1
                    ra[i] += wya * 0.75 * (ge + go)
                    rb[i] += wyb * 0.75 * (ge + go)
                    ra[il] += wya * 0.25 * ge
                    rb[il] += wyb * 0.25 * ge
                    ra[ir] += wya * 0.25 * go
                    rb[ir] += wyb * 0.25 * go
    return dx


@njit(**_JIT)
def down2_fwd(x):
    n, c, h, w = x.shape
    ho = h // 2
    wo = w // 2
    out = np.empty((n, c, ho, wo), x.dtype)
    for ni in range(n):
        for cc in range(c):
            for y in range(ho):
                r0 = x[ni, cc, 2 * y]
                r1 = x[ni, cc, 2 * y + 1]
                orow = out[ni, cc, y]
                for i in range(wo):
                    orow[i] = 0.25 * (r0[2 * i] + r0[2 * i + 1] + r1[2 * i] + r1[2 * i + 1])
    return out


@njit(**_JIT)
def down2_bwd(dy):
    n, c, ho, wo = dy.shape
    dx = np.empty((n, c, 2 * ho, 2 * wo), dy.dtype)
    for ni in range(n):
        for cc in range(c):
            for y in range(ho):
                dyrow = dy[ni, cc, y]
                r0 = dx[ni, cc, 2 * y]
                r1 = dx[ni, cc, 2 * y + 1]
                for i in range(wo):
                    g = 0.25 * dyrow[i]
                    r0[2 * i] = g
                    r0[2 * i + 1] = g
                    r1[2 * i] = g
                    r1[2 * i + 1] = g
    return dx
