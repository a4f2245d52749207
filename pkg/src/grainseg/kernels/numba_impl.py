"""Numba-jitted kernel implementations (default backend).

Convolutions run as jitted im2col gathers feeding a single BLAS matmul
per call (np.dot inside @njit); pooling stays as plain compiled loops.
No prange: results must be bit-reproducible run to run.
"""

import numpy as np
from numba import njit

NEG_INF = np.float32(-np.inf)


@njit(cache=True)
def _im2col(x, kh, kw, stride, pad, ho, wo):
    """Rows indexed by (batch, out_y, out_x); columns by (cin, u, v)."""
    n, cin, h, wd = x.shape
    col = np.zeros((n * ho * wo, cin * kh * kw), np.float32)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                for ci in range(cin):
                    base = ci * kh * kw
                    for u in range(kh):
                        hh = i * stride - pad + u
                        if hh < 0 or hh >= h:
                            continue
                        for v in range(kw):
                            ww = j * stride - pad + v
                            if 0 <= ww < wd:
                                col[row, base + u * kw + v] = x[b, ci, hh, ww]
    return col


@njit(cache=True)
def _col2im(g, n, cin, h, wd, kh, kw, stride, pad, ho, wo):
    """Adjoint of _im2col: scatter-add column gradients back to image."""
    dx = np.zeros((n, cin, h, wd), np.float32)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                for ci in range(cin):
                    base = ci * kh * kw
                    for u in range(kh):
                        hh = i * stride - pad + u
                        if hh < 0 or hh >= h:
                            continue
                        for v in range(kw):
                            ww = j * stride - pad + v
                            if 0 <= ww < wd:
                                dx[b, ci, hh, ww] += g[row, base + u * kw + v]
    return dx


@njit(cache=True)
def _wmat(w):
    """(Cout,Cin,kh,kw) -> contiguous (Cin*kh*kw, Cout) for x @ wmat."""
    cout, cin, kh, kw = w.shape
    out = np.empty((cin * kh * kw, cout), np.float32)
    for co in range(cout):
        for ci in range(cin):
            for u in range(kh):
                for v in range(kw):
                    out[ci * kh * kw + u * kw + v, co] = w[co, ci, u, v]
    return out


@njit(cache=True)
def _dy_rows(dy):
    """(N,Cout,ho,wo) -> (N*ho*wo, Cout) in _im2col row order."""
    n, cout, ho, wo = dy.shape
    out = np.empty((n * ho * wo, cout), np.float32)
    for b in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    out[(b * ho + i) * wo + j, co] = dy[b, co, i, j]
    return out


@njit(cache=True)
def conv2d_forward(x, w, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    col = _im2col(x, kh, kw, stride, pad, ho, wo)
    flat = np.dot(col, _wmat(w))
    y = np.empty((n, cout, ho, wo), np.float32)
    for b in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    y[b, co, i, j] = flat[(b * ho + i) * wo + j, co]
    return y


@njit(cache=True)
def conv2d_dx(dy, w, stride, pad, h, wd):
    n, cout, ho, wo = dy.shape
    _, cin, kh, kw = w.shape
    g = np.dot(_dy_rows(dy), _wmat(w).T.copy())
    return _col2im(g, n, cin, h, wd, kh, kw, stride, pad, ho, wo)


@njit(cache=True)
def conv2d_dw(x, dy, stride, pad, kh, kw):
    n, cin, h, wd = x.shape
    _, cout, ho, wo = dy.shape
    col = _im2col(x, kh, kw, stride, pad, ho, wo)
    flat = np.dot(_dy_rows(dy).T.copy(), col)   # (Cout, Cin*kh*kw)
    dw = np.empty((cout, cin, kh, kw), np.float32)
    for co in range(cout):
        for ci in range(cin):
            for u in range(kh):
                for v in range(kw):
                    dw[co, ci, u, v] = flat[co, ci * kh * kw + u * kw + v]
    return dw


@njit(cache=True)
def convt2d_forward(x, w, stride, pad, out_pad):
    # transposed conv as the adjoint of a conv whose input is the output
    # frame: scatter x @ w over the kernel footprint
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * pad + kh + out_pad
    wo = (wd - 1) * stride - 2 * pad + kw + out_pad
    wt = np.ascontiguousarray(w).reshape(cin, cout * kh * kw)
    xr = _dy_rows(x)                            # (N*h*wd, Cin)
    g = np.dot(xr, wt)                          # (N*h*wd, Cout*kh*kw)
    y = np.zeros((n, cout, ho, wo), np.float32)
    for b in range(n):
        for i in range(h):
            for j in range(wd):
                row = (b * h + i) * wd + j
                for co in range(cout):
                    base = co * kh * kw
                    for u in range(kh):
                        hh = i * stride - pad + u
                        if hh < 0 or hh >= ho:
                            continue
                        for v in range(kw):
                            ww = j * stride - pad + v
                            if 0 <= ww < wo:
                                y[b, co, hh, ww] += g[row, base + u * kw + v]
    return y


@njit(cache=True)
def convt2d_dx(dy, w, stride, pad):
    n, cout, ho, wo = dy.shape
    cin, _, kh, kw = w.shape
    h = (ho + 2 * pad - kh) // stride + 1
    wd = (wo + 2 * pad - kw) // stride + 1
    col = _im2col(dy, kh, kw, stride, pad, h, wd)   # gather from output frame
    wt = np.ascontiguousarray(w).reshape(cin, cout * kh * kw)
    flat = np.dot(col, wt.T.copy())                 # (N*h*wd, Cin)
    dx = np.empty((n, cin, h, wd), np.float32)
    for b in range(n):
        for ci in range(cin):
            for i in range(h):
                for j in range(wd):
                    dx[b, ci, i, j] = flat[(b * h + i) * wd + j, ci]
    return dx


@njit(cache=True)
def convt2d_dw(x, dy, stride, pad, kh, kw):
    n, cin, h, wd = x.shape
    _, cout, ho, wo = dy.shape
    col = _im2col(dy, kh, kw, stride, pad, h, wd)
    flat = np.dot(_dy_rows(x).T.copy(), col)        # (Cin, Cout*kh*kw)
    return np.ascontiguousarray(flat).reshape(cin, cout, kh, kw)


@njit(cache=True)
def maxpool2d_forward(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    y = np.empty((n, c, ho, wo), np.float32)
    idx = np.zeros((n, c, ho, wo), np.int64)
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = NEG_INF
                    bi = np.int64(0)
                    for u in range(k):
                        hh = i * stride - pad + u
                        if hh < 0 or hh >= h:
                            continue
                        for v in range(k):
                            ww = j * stride - pad + v
                            if 0 <= ww < w:
                                val = x[b, ch, hh, ww]
                                if val > best:  # strict: first cell in row-major order wins
                                    best = val
                                    bi = np.int64(hh * w + ww)
                    y[b, ch, i, j] = best
                    idx[b, ch, i, j] = bi
    return y, idx


@njit(cache=True)
def maxpool2d_backward(dy, idx, h, w):
    n, c, ho, wo = dy.shape
    dx = np.zeros((n, c, h, w), np.float32)
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    flat = idx[b, ch, i, j]
                    dx[b, ch, flat // w, flat % w] += dy[b, ch, i, j]
    return dx
