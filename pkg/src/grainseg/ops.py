"""Differentiable operations over Tensor.

Convolution follows cross-correlation semantics (no kernel flip) with
zero padding and N x C x H x W layout. The heavy inner loops live in the
kernels package; everything here is graph bookkeeping plus the cheap
elementwise ops.
"""

import numpy as np

from . import kernels as K
from .tensor import Tensor, make_node


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    if stride <= 0 or padding < 0:
        raise ValueError(f"invalid stride={stride} or padding={padding}")
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise ValueError(
            f"input has {cin} channels but weight expects {wcin}")
    if kh > h + 2 * padding or kw > wd + 2 * padding:
        raise ValueError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{wd + 2 * padding}")
    y = K.conv2d_forward(x.data, w.data, stride, padding)
    if b is not None:
        y = y + b.data.reshape(1, -1, 1, 1)

    def backward(g):
        g = np.ascontiguousarray(g)
        dx = K.conv2d_dx(g, w.data, stride, padding, h, wd)
        dw = K.conv2d_dw(x.data, g, stride, padding, kh, kw)
        db = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(y, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    if stride <= 0 or padding < 0:
        raise ValueError(f"invalid stride={stride} or padding={padding}")
    if not 0 <= output_padding < stride:
        raise ValueError(
            f"output_padding={output_padding} must be in [0, stride={stride})")
    n, cin, h, wd = x.shape
    wcin, cout, kh, kw = w.shape
    if wcin != cin:
        raise ValueError(
            f"input has {cin} channels but weight expects {wcin}")
    y = K.convt2d_forward(x.data, w.data, stride, padding, output_padding)
    if b is not None:
        y = y + b.data.reshape(1, -1, 1, 1)

    def backward(g):
        g = np.ascontiguousarray(g)
        dx = K.convt2d_dx(g, w.data, stride, padding)
        dw = K.convt2d_dw(x.data, g, stride, padding, kh, kw)
        db = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(y, parents, backward)


def maxpool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    if k <= 0 or stride <= 0:
        raise ValueError(f"invalid pool size k={k} or stride={stride}")
    n, c, h, w = x.shape
    y, idx = K.maxpool2d_forward(x.data, k, stride, padding)

    def backward(g):
        return (K.maxpool2d_backward(np.ascontiguousarray(g), idx, h, w),)

    return make_node(y, (x,), backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, eps: float = 1e-5,
                momentum: float = 0.1) -> Tensor:
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    if n * h * w == 0:
        raise ValueError("batchnorm over an empty batch")
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))  # biased, also used for running stats
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    invstd = (1.0 / np.sqrt(var + eps)).astype(np.float32)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * invstd.reshape(1, c, 1, 1)
    y = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    m = n * h * w

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        gscale = (gamma.data * invstd).reshape(1, c, 1, 1)
        if training:
            dx = (gscale / m) * (
                m * g
                - dbeta.reshape(1, c, 1, 1)
                - xhat * dgamma.reshape(1, c, 1, 1))
        else:
            dx = gscale * g
        return (dx.astype(np.float32), dgamma, dbeta)

    return make_node(y.astype(np.float32), (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def backward(g):
        return (g * (x.data > 0.0),)

    return make_node(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = (1.0 / (1.0 + np.exp(-x.data))).astype(np.float32)

    def backward(g):
        return (g * y * (1.0 - y),)

    return make_node(y, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    y = a.data + b.data

    def backward(g):
        return (g, g)

    return make_node(y, (a, b), backward)


def sum_all(x: Tensor) -> Tensor:
    y = np.array([x.data.sum()], dtype=np.float32)

    def backward(g):
        return (np.full_like(x.data, g.reshape(-1)[0]),)

    return make_node(y, (x,), backward)
