"""Array-level convolution and pooling kernels.

Convolution is cross-correlation (no kernel flip) computed by gathering the
kh*kw shifted views of the zero-padded input and contracting each channel
group with one batched matmul. Pooling uses the same tap loop.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, conv_out_extent


def _tap_slices(i: int, j: int, stride: int, dilation: int, ho: int, wo: int):
    r0, c0 = i * dilation, j * dilation
    return (
        slice(r0, r0 + stride * (ho - 1) + 1, stride),
        slice(c0, c0 + stride * (wo - 1) + 1, stride),
    )


def pad_hw(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int, dilation: int):
    """Return cols of shape (N, C, kh, kw, Ho, Wo) plus (Ho, Wo)."""
    n, c, h, w = x.shape
    ho = conv_out_extent(h, kh, stride, padding, dilation)
    wo = conv_out_extent(w, kw, stride, padding, dilation)
    xp = pad_hw(x, padding)
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap_slices(i, j, stride, dilation, ho, wo)
            cols[:, :, i, j] = xp[:, :, rs, cs]
    return cols, ho, wo


def col2im(cols: np.ndarray, x_shape, stride: int, padding: int, dilation: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add taps back onto the input grid."""
    n, c, h, w = x_shape
    _, _, kh, kw, ho, wo = cols.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap_slices(i, j, stride, dilation, ho, wo)
            xp[:, :, rs, cs] += cols[:, :, i, j]
    if padding:
        xp = xp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(xp)


def check_conv_shapes(x_shape, w_shape, b_shape, groups: int) -> None:
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(f"conv2d expects rank-4 input and weight, got {x_shape} and {w_shape}")
    n, cin, h, w = x_shape
    cout, cin_g, kh, kw = w_shape
    if groups < 1 or cin % groups or cout % groups:
        raise ShapeError(f"groups={groups} must divide in_channels={cin} and out_channels={cout}")
    if cin_g != cin // groups:
        raise ShapeError(
            f"weight expects {cin_g} input channels per group, input provides {cin // groups}"
        )
    if b_shape is not None and tuple(b_shape) != (cout,):
        raise ShapeError(f"bias shape {tuple(b_shape)} does not match out_channels={cout}")


def conv2d_forward(x, w, b, stride, padding, dilation, groups):
    n, cin, _, _ = x.shape
    cout, cin_g, kh, kw = w.shape
    cols, ho, wo = im2col(x, kh, kw, stride, padding, dilation)
    g = groups
    k = cin_g * kh * kw
    cols_g = cols.reshape(n, g, k, ho * wo)
    w_g = w.reshape(g, cout // g, k)
    out = np.matmul(w_g[None], cols_g).reshape(n, cout, ho, wo)
    if b is not None:
        out += b.reshape(1, cout, 1, 1)
    return out, cols


def conv2d_backward(gy, x_shape, w, cols, stride, padding, dilation, groups, has_bias):
    n = gy.shape[0]
    cout, cin_g, kh, kw = w.shape
    g = groups
    k = cin_g * kh * kw
    ho, wo = gy.shape[2], gy.shape[3]
    gy_g = gy.reshape(n, g, cout // g, ho * wo)
    cols_g = cols.reshape(n, g, k, ho * wo)
    gw = np.matmul(gy_g, cols_g.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
    w_g = w.reshape(g, cout // g, k)
    gcols = np.matmul(w_g.transpose(0, 2, 1)[None], gy_g)
    gcols = gcols.reshape(n, x_shape[1], kh, kw, ho, wo)
    gx = col2im(gcols, x_shape, stride, padding, dilation)
    gb = gy.sum(axis=(0, 2, 3)) if has_bias else None
    return gx, gw, gb


def avg_pool_forward(x, k, stride, padding):
    cols, ho, wo = im2col(x, k, k, stride, padding, 1)
    # divisor is the full window area, padded zeros included
    return cols.sum(axis=(2, 3)) / (k * k)


def avg_pool_backward(gy, x_shape, k, stride, padding):
    n, c, ho, wo = gy.shape
    taps = np.broadcast_to((gy / (k * k))[:, :, None, None], (n, c, k, k, ho, wo))
    return col2im(np.ascontiguousarray(taps), x_shape, stride, padding, 1)


def max_pool_forward(x, k, stride, padding):
    """Window maxima, index of the first maximal tap, and the number of ties."""
    n, c, h, w = x.shape
    ho = conv_out_extent(h, k, stride, padding)
    wo = conv_out_extent(w, k, stride, padding)
    xp = pad_hw(x, padding, value=-np.inf)
    best = np.full((n, c, ho, wo), -np.inf, dtype=x.dtype)
    arg = np.zeros((n, c, ho, wo), dtype=np.int64)
    tie = np.zeros((n, c, ho, wo), dtype=bool)
    for i in range(k):
        for j in range(k):
            rs, cs = _tap_slices(i, j, stride, 1, ho, wo)
            v = xp[:, :, rs, cs]
            gt = v > best
            tie = np.where(gt, False, tie | (v == best))
            best = np.where(gt, v, best)
            arg = np.where(gt, i * k + j, arg)
    return best, arg, int(tie.sum())


def max_pool_backward(gy, arg, x_shape, k, stride, padding):
    n, c, ho, wo = gy.shape
    taps = np.zeros((n, c, k, k, ho, wo), dtype=gy.dtype)
    for i in range(k):
        for j in range(k):
            taps[:, :, i, j] = np.where(arg == i * k + j, gy, 0)
    return col2im(taps, x_shape, stride, padding, 1)
