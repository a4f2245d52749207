"""Pure-numpy kernel implementations.

Vectorized over batch/channel/spatial axes with an explicit loop over the
(small) kernel window. Selected via GRAINSEG_BACKEND=numpy; otherwise used
as the fallback when numba is unavailable.
"""

import numpy as np

NEG_INF = np.float32(-np.inf)


def conv2d_forward(x, w, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    y = np.zeros((n, cout, ho, wo), np.float32)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u:u + (ho - 1) * stride + 1:stride,
                    v:v + (wo - 1) * stride + 1:stride]
            y += np.einsum("ncij,oc->noij", xs, w[:, :, u, v], optimize=True)
    return y


def conv2d_dx(dy, w, stride, pad, h, wd):
    n, cout, ho, wo = dy.shape
    _, cin, kh, kw = w.shape
    dxp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad), np.float32)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u:u + (ho - 1) * stride + 1:stride,
                v:v + (wo - 1) * stride + 1:stride] += np.einsum(
                    "noij,oc->ncij", dy, w[:, :, u, v], optimize=True)
    return np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + wd])


def conv2d_dw(x, dy, stride, pad, kh, kw):
    n, cin, h, wd = x.shape
    _, cout, ho, wo = dy.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dw = np.zeros((cout, cin, kh, kw), np.float32)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u:u + (ho - 1) * stride + 1:stride,
                    v:v + (wo - 1) * stride + 1:stride]
            dw[:, :, u, v] = np.einsum("noij,ncij->oc", dy, xs, optimize=True)
    return dw


def convt2d_forward(x, w, stride, pad, out_pad):
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * pad + kh + out_pad
    wo = (wd - 1) * stride - 2 * pad + kw + out_pad
    yp = np.zeros((n, cout, (h - 1) * stride + kh + out_pad,
                   (wd - 1) * stride + kw + out_pad), np.float32)
    for u in range(kh):
        for v in range(kw):
            yp[:, :, u:u + (h - 1) * stride + 1:stride,
               v:v + (wd - 1) * stride + 1:stride] += np.einsum(
                   "ncij,co->noij", x, w[:, :, u, v], optimize=True)
    return np.ascontiguousarray(yp[:, :, pad:pad + ho, pad:pad + wo])


def convt2d_dx(dy, w, stride, pad):
    # adjoint of the stamp: a plain convolution of dy with w read as (out=cin, in=cout)
    return conv2d_forward(dy, w, stride, pad)


def convt2d_dw(x, dy, stride, pad, kh, kw):
    n, cin, h, wd = x.shape
    _, cout, ho, wo = dy.shape
    dyp = np.pad(dy, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dw = np.zeros((cin, cout, kh, kw), np.float32)
    for u in range(kh):
        for v in range(kw):
            ds = dyp[:, :, u:u + (h - 1) * stride + 1:stride,
                     v:v + (wd - 1) * stride + 1:stride]
            dw[:, :, u, v] = np.einsum("ncij,noij->co", x, ds, optimize=True)
    return dw


def maxpool2d_forward(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.full((n, c, h + 2 * pad, w + 2 * pad), NEG_INF, np.float32)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    rows = np.arange(ho) * stride - pad
    cols = np.arange(wo) * stride - pad
    best = np.full((n, c, ho, wo), NEG_INF, np.float32)
    idx = np.zeros((n, c, ho, wo), np.int64)
    for u in range(k):
        hh = rows + u
        for v in range(k):
            ww = cols + v
            vals = xp[:, :, u:u + (ho - 1) * stride + 1:stride,
                      v:v + (wo - 1) * stride + 1:stride]
            cand = hh[:, None] * w + ww[None, :]
            better = vals > best  # strict: first window cell in row-major order wins ties
            best = np.where(better, vals, best)
            idx = np.where(better, cand, idx)
    return best, idx


def maxpool2d_backward(dy, idx, h, w):
    n, c, ho, wo = dy.shape
    dx = np.zeros((n, c, h * w), np.float32)
    ns = np.arange(n)[:, None, None, None]
    cs = np.arange(c)[None, :, None, None]
    np.add.at(dx, (ns, cs, idx), dy)
    return dx.reshape(n, c, h, w)
