"""Differentiable tensor operations.

Every function computes its forward result with numpy and, when a tape is
active and an input requires a gradient, records a closure that maps the
output gradient to input gradients. Functions also report their FLOP cost to
any active :class:`FlopCounter` using the conventions in
:mod:`msyolo.blocks.accounting`.
"""

from __future__ import annotations

import builtins
import math
from contextlib import contextmanager
from typing import NamedTuple, Sequence

import numpy as np

from ..autodiff.tape import record
from . import kernels
from .tensor import ConvParams, ShapeError, Tensor

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715

# FLOP conventions, shared with the closed-form counters.
FLOPS_PER_MAC = 2
FLOPS_BN = 2
FLOPS_ACT = 4
FLOPS_ELEMENTWISE = 1


class FlopCounter:
    """Accumulates FLOPs of every op executed inside ``with counting(c):``."""

    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.total += n
        self.by_op[op] = self.by_op.get(op, 0) + n


_counters: list[FlopCounter] = []


@contextmanager
def counting(counter: FlopCounter | None = None):
    counter = counter or FlopCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _flops(op: str, n: int) -> None:
    for c in _counters:
        c.add(op, int(n))


def _wrap(arr: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.require(arr, requirements="C")
    out.requires_grad = False
    out.name = None
    return out


_promoting = [False]


@contextmanager
def promoting():
    """Allow mixed-precision inputs (numpy promotion) inside the block.

    Used by the finite-difference oracle, which evaluates functions with
    wider leaves than the module buffers they read."""
    prev = _promoting[0]
    _promoting[0] = True
    try:
        yield
    finally:
        _promoting[0] = prev


def _check_same_dtype(*ts: Tensor) -> None:
    if _promoting[0]:
        return
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise ShapeError(f"mixed precision inputs: {dt} and {t.dtype}")


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ---------------------------------------------------------------------------
# Convolution and normalization
# ---------------------------------------------------------------------------


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    params: ConvParams | None = None,
    *,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` has shape (Cout, Cin/groups, kh, kw). Geometry comes from
    ``params`` when given, otherwise from the keyword arguments.
    """
    if params is not None:
        if weight.shape[0] != params.out_channels or weight.shape[2:] != (params.kernel_h, params.kernel_w):
            raise ShapeError(f"weight shape {weight.shape} does not match {params}")
        if params.has_bias != (bias is not None):
            raise ShapeError("bias presence does not match ConvParams.has_bias")
        stride, padding, dilation, groups = params.stride, params.padding, params.dilation, params.groups
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError("stride and dilation must be >= 1, padding >= 0")
    kernels.check_conv_shapes(x.shape, weight.shape, None if bias is None else bias.shape, groups)
    _check_same_dtype(x, weight, *([bias] if bias is not None else []))

    y, cols = kernels.conv2d_forward(x.data, weight.data, None if bias is None else bias.data,
                                     stride, padding, dilation, groups)
    cout, cin_g, kh, kw = weight.shape
    _flops("conv2d", FLOPS_PER_MAC * cout * cin_g * kh * kw * y.shape[0] * y.shape[2] * y.shape[3]
           + (y.size if bias is not None else 0))
    x_shape, w_data = x.shape, weight.data

    def backward(g):
        gx, gw, gb = kernels.conv2d_backward(g, x_shape, w_data, cols, stride, padding, dilation,
                                             groups, bias is not None)
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", _wrap(y), inputs, backward)


class BatchNormOutput(NamedTuple):
    out: Tensor
    running_mean: Tensor
    running_var: Tensor


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    eps: float = 1e-5,
    mode: str = "infer",
    momentum: float = 0.1,
) -> BatchNormOutput:
    """Per-channel batch normalization over (N, H, W).

    ``mode="train"`` normalizes with batch statistics and returns updated
    running statistics (unbiased variance, exponential moving average with
    ``momentum``); ``mode="infer"`` uses the running statistics, which are
    returned unchanged and treated as constants by the gradient.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects rank-4 input, got {x.shape}")
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (c,):
            raise ShapeError(f"{name} shape {t.shape} does not match {c} channels")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    xd = x.data
    g4 = gamma.data.reshape(1, c, 1, 1)
    _flops("batch_norm", FLOPS_BN * x.size)

    if mode == "infer":
        inv = 1.0 / np.sqrt(running_var.data + eps)
        xhat = (xd - running_mean.data.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
        y = xhat * g4 + beta.data.reshape(1, c, 1, 1)

        def backward(g):
            return g * (g4 * inv.reshape(1, c, 1, 1)), (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        out = record("batch_norm", _wrap(y), (x, gamma, beta), backward)
        return BatchNormOutput(out, running_mean, running_var)

    m = xd.shape[0] * xd.shape[2] * xd.shape[3]
    if m < 2:
        raise ShapeError("train-mode batch_norm needs at least 2 values per channel")
    mean = xd.mean(axis=(0, 2, 3))
    xc = xd - mean.reshape(1, c, 1, 1)
    var = (xc * xc).mean(axis=(0, 2, 3))
    inv = (1.0 / np.sqrt(var + eps)).reshape(1, c, 1, 1)
    xhat = xc * inv
    y = xhat * g4 + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        gxhat = g * g4
        gx = inv / m * (m * gxhat - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    out = record("batch_norm", _wrap(y), (x, gamma, beta), backward)
    unbiased = var * (m / (m - 1))
    new_mean = _wrap((1 - momentum) * running_mean.data + momentum * mean)
    new_var = _wrap((1 - momentum) * running_var.data + momentum * unbiased)
    return BatchNormOutput(out, new_mean, new_var)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    _flops("sigmoid", FLOPS_ACT * x.size)
    return record("sigmoid", _wrap(s), (x,), lambda g: (g * s * (1 - s),))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid(x.data)
    xd = x.data
    _flops("silu", FLOPS_ACT * x.size)
    return record("silu", _wrap(xd * s), (x,), lambda g: (g * (s * (1 + xd * (1 - s))),))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    t = np.tanh(_GELU_K * (xd + _GELU_C * xd ** 3))
    y = 0.5 * xd * (1 + t)
    _flops("gelu", FLOPS_ACT * x.size)

    def backward(g):
        dt = (1 - t * t) * _GELU_K * (1 + 3 * _GELU_C * xd * xd)
        return (g * (0.5 * (1 + t) + 0.5 * xd * dt),)

    return record("gelu", _wrap(y), (x,), backward)


def softmax(x: Tensor, axis: int) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    _flops("softmax", FLOPS_ACT * x.size)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", _wrap(y), (x,), backward)


# ---------------------------------------------------------------------------
# Pooling and resampling
# ---------------------------------------------------------------------------


def avg_pool2d(x: Tensor, kernel: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Window mean; the divisor is always kernel*kernel (padding counts)."""
    stride = stride or kernel
    y = kernels.avg_pool_forward(x.data, kernel, stride, padding)
    _flops("avg_pool2d", kernel * kernel * y.size)
    shape = x.shape
    return record("avg_pool2d", _wrap(y), (x,),
                  lambda g: (kernels.avg_pool_backward(g, shape, kernel, stride, padding),))


def max_pool2d(x: Tensor, kernel: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Window maximum; ties route the gradient to the first maximal tap."""
    stride = stride or kernel
    if padding > kernel // 2:
        raise ShapeError("max_pool2d padding must be at most kernel // 2")
    y, arg, ties = kernels.max_pool_forward(x.data, kernel, stride, padding)
    _flops("max_pool2d", kernel * kernel * y.size)
    shape = x.shape
    return record("max_pool2d", _wrap(y), (x,),
                  lambda g: (kernels.max_pool_backward(g, arg, shape, kernel, stride, padding),), ties)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects rank-4 input, got {x.shape}")
    n, c, h, w = x.shape
    y = x.data.mean(axis=(2, 3), keepdims=True)
    _flops("global_avg_pool", x.size)
    return record("global_avg_pool", _wrap(y), (x,),
                  lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),))


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4 or factor < 1:
        raise ShapeError("upsample_nearest expects rank-4 input and factor >= 1")
    y = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record("upsample_nearest", _wrap(y), (x,), backward)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero padding of the two trailing (spatial) axes."""
    if x.ndim != 4 or min(top, bottom, left, right) < 0:
        raise ShapeError("pad2d expects rank-4 input and non-negative padding")
    y = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    h, w = x.shape[2], x.shape[3]
    return record("pad2d", _wrap(y), (x,), lambda g: (g[:, :, top:top + h, left:left + w],))


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    y = np.asarray(x.data.sum(), dtype=x.dtype).reshape(())
    _flops("sum", x.size)
    return record("sum", _wrap(y), (x,), lambda g: (np.full(x.shape, g.reshape(()), dtype=x.dtype),))


def mean(x: Tensor) -> Tensor:
    y = np.asarray(x.data.mean(), dtype=x.dtype).reshape(())
    n = x.size
    _flops("mean", x.size)
    return record("mean", _wrap(y), (x,), lambda g: (np.full(x.shape, g.reshape(()) / n, dtype=x.dtype),))


def mean_axis(x: Tensor, axis: int) -> Tensor:
    """Mean over one axis, keeping it as a singleton extent."""
    axis = _norm_axis(axis, x.ndim)
    n = x.shape[axis]
    y = x.data.mean(axis=axis, keepdims=True)
    _flops("mean_axis", x.size)
    return record("mean_axis", _wrap(y), (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def max_axis(x: Tensor, axis: int) -> Tensor:
    """Max over one axis (kept as a singleton); first maximal index wins."""
    axis = _norm_axis(axis, x.ndim)
    arg = np.expand_dims(x.data.argmax(axis=axis), axis)
    y = np.take_along_axis(x.data, arg, axis=axis)
    ties = int(((x.data == y).sum(axis=axis) > 1).sum())
    _flops("max_axis", x.size)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.put_along_axis(gx, arg, g, axis=axis)
        return (gx,)

    return record("max_axis", _wrap(y), (x,), backward, ties)


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if len(tensors) == 0:
        raise ShapeError("concat needs at least one tensor")
    ref = tensors[0]
    axis = _norm_axis(axis, ref.ndim)
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(a != b for d, (a, b) in enumerate(zip(t.shape, ref.shape)) if d != axis):
            raise ShapeError(f"concat shape mismatch: {ref.shape} vs {t.shape} on axis {axis}")
    _check_same_dtype(*tensors)
    y = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        idx = [slice(None)] * g.ndim
        out = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(a, b)
            out.append(g[tuple(idx)])
        return out

    return record("concat", _wrap(y), tuple(tensors), backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = 1) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}) out of range for extent {x.shape[axis]}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    y = x.data[idx].copy()

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[idx] = g
        return (gx,)

    return record("slice", _wrap(y), (x,), backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    axis = _norm_axis(axis, x.ndim)
    if any(s < 1 for s in sizes) or builtins.sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not partition extent {x.shape[axis]}")
    out, start = [], 0
    for s in sizes:
        out.append(slice_axis(x, start, start + s, axis))
        start += s
    return out


def reshape(x: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {new_shape}")
    y = x.data.reshape(new_shape).copy()  # outputs never alias inputs
    return record("reshape", _wrap(y), (x,), lambda g: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    if a.ndim != b.ndim:
        raise ShapeError(f"rank mismatch {a.shape} vs {b.shape}")
    out = []
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}")
        out.append(max(x, y))
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    axes = tuple(d for d, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def add(a: Tensor, b: Tensor) -> Tensor:
    shape = _broadcast_shape(a, b)
    _check_same_dtype(a, b)
    _flops("add", FLOPS_ELEMENTWISE * int(np.prod(shape)))
    return record("add", _wrap(a.data + b.data), (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    shape = _broadcast_shape(a, b)
    _check_same_dtype(a, b)
    _flops("sub", FLOPS_ELEMENTWISE * int(np.prod(shape)))
    return record("sub", _wrap(a.data - b.data), (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; size-1 extents broadcast."""
    shape = _broadcast_shape(a, b)
    _check_same_dtype(a, b)
    _flops("mul", FLOPS_ELEMENTWISE * int(np.prod(shape)))
    ad, bd = a.data, b.data
    return record("mul", _wrap(ad * bd), (a, b),
                  lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    _flops("scale", FLOPS_ELEMENTWISE * x.size)
    return record("scale", _wrap(x.data * c), (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    _flops("add", FLOPS_ELEMENTWISE * x.size)
    # adding zero copies, so the sign of -0.0 survives
    y = x.data.copy() if c == 0 else x.data + x.dtype.type(c)
    return record("add_scalar", _wrap(y), (x,), lambda g: (g,))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    d = sub(pred, target)
    return mean(mul(d, d))
