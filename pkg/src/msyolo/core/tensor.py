"""Tensor container, seeded RNG and convolution parameters.

Tensors are thin wrappers over C-contiguous numpy arrays of rank <= 4
(interpreted as N, C, H, W at rank 4). Only float32 ("single") and float64
("double") storage is supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

Precision = Literal["single", "double"]

DTYPES: dict[str, type] = {"single": np.float32, "double": np.float64}
MAX_RANK = 4


class ShapeError(ValueError):
    """Raised when tensor shapes or operation parameters are incompatible."""


def dtype_for(precision: str) -> np.dtype:
    try:
        return np.dtype(DTYPES[precision])
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; expected 'single' or 'double'") from None


class Tensor:
    """A rank <= 4 float tensor.

    Parameters
    ----------
    data : array_like
        Values. Float64 input stays float64; anything else is stored as
        float32 unless ``precision`` says otherwise.
    requires_grad : bool
        Marks the tensor as a trainable leaf for reverse-mode differentiation.
    name : str, optional
        Label used in gradient reports and weight files.
    precision : {"single", "double"}, optional
        Force the storage type.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        precision: Precision | None = None,
    ):
        if precision is not None:
            arr = np.array(data, dtype=dtype_for(precision), order="C")
        else:
            arr = np.asarray(data)
            if arr.dtype != np.float64:
                arr = arr.astype(np.float32)
            arr = np.require(arr, requirements="C")  # keeps rank 0
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the maximum of {MAX_RANK}")
        if any(e < 1 for e in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def precision(self) -> Precision:
        return "double" if self.data.dtype == np.float64 else "single"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def to(self, precision: Precision) -> "Tensor":
        """Copy with the given storage precision (keeps name and grad flag)."""
        return Tensor(self.data, requires_grad=self.requires_grad, name=self.name, precision=precision)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, name=self.name)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    # Operator sugar; everything routes through the recorded ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, precision={self.precision}{label}{grad})"


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value, dtype=like.dtype))


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    """Boundary validation: reject NaN/Inf."""
    if not t.is_finite():
        raise ValueError(f"{what} contains NaN or Inf values")
    return t


# ---------------------------------------------------------------------------
# Random numbers
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


class Rng:
    """splitmix64 generator.

    The i-th draw after state ``s`` is ``mix(s + i * golden)``, so blocks of
    draws are produced with vectorized uint64 arithmetic and the stream is
    identical regardless of how draws are chunked.
    """

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + idx * _GOLDEN
            z = (z ^ (z >> np.uint64(30))) * _MIX1
            z = (z ^ (z >> np.uint64(27))) * _MIX2
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * 0x9E3779B97F4A7C15) & _MASK
        return z

    def uniform(self, shape: Sequence[int], low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Float64 draws in [low, high) using the top 53 bits of each word."""
        n = int(np.prod(shape, dtype=np.int64)) if len(shape) else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (low + (high - low) * u).reshape(tuple(shape))

    def normal(self, shape: Sequence[int]) -> np.ndarray:
        """Standard normal draws via Box-Muller (two uniforms per value)."""
        n = int(np.prod(shape, dtype=np.int64)) if len(shape) else 1
        u = self.uniform((2, n))
        u1 = 1.0 - u[0]  # (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        return (r * np.cos(2.0 * math.pi * u[1])).reshape(tuple(shape))

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        """Integers in [low, high) (modulo reduction; bias is irrelevant here)."""
        span = high - low
        if span <= 0:
            raise ValueError("empty integer range")
        return (self.next_u64(size) % np.uint64(span)).astype(np.int64) + low


def rng_fill(
    rng: Rng,
    shape: Iterable[int],
    scheme: str = "kaiming-uniform",
    *,
    fan_in: int | None = None,
    value: float = 0.0,
    precision: Precision = "single",
) -> Tensor:
    """Fill a new tensor.

    ``scheme`` is ``"kaiming-uniform"`` (U(-b, b), b = sqrt(6 / fan_in)) or
    ``"constant"`` (every element equal to ``value``). For convolution weights
    of shape (Cout, Cin/groups, kh, kw) the default fan_in is the product of
    the trailing three extents.
    """
    shape = tuple(int(s) for s in shape)
    if scheme == "constant":
        return Tensor(np.full(shape, value), precision=precision)
    if scheme != "kaiming-uniform":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if fan_in is None:
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(shape, -bound, bound), precision=precision)


# ---------------------------------------------------------------------------
# Convolution parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvParams:
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self):
        if self.stride < 1 or self.dilation < 1:
            raise ShapeError("stride and dilation must be >= 1")
        if self.padding < 0:
            raise ShapeError("padding must be >= 0")
        if self.groups < 1 or self.out_channels % self.groups:
            raise ShapeError(
                f"out_channels={self.out_channels} not divisible by groups={self.groups}"
            )

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = conv_out_extent(h, self.kernel_h, self.stride, self.padding, self.dilation)
        wo = conv_out_extent(w, self.kernel_w, self.stride, self.padding, self.dilation)
        return ho, wo


def conv_out_extent(size: int, kernel: int, stride: int, padding: int, dilation: int = 1) -> int:
    out = (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1
    if out < 1:
        raise ShapeError(
            f"non-positive output extent: size={size} kernel={kernel} stride={stride} "
            f"padding={padding} dilation={dilation}"
        )
    return out
