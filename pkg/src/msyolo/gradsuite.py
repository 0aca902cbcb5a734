"""Named gradient-check cases for every differentiable op and block.

Each case builds small random inputs from a seed and returns the function to
differentiate together with the tensors to check. Blocks run with batch norm
in inference mode and non-trivial random statistics, so the statistics are
constants of the map.
"""

from __future__ import annotations

from typing import Callable

from .autodiff import GradcheckReport, gradcheck
from .blocks import CBS, DCFEM, DWR, LADS, MSDRM, DcfemConfig, DwrConfig, LadsConfig, Module, MsDrmConfig
from .core import ops
from .core.tensor import Rng, Tensor

Case = tuple[Callable, dict[str, Tensor]]


def _t(rng: Rng, shape, precision, low=None, high=None) -> Tensor:
    data = rng.normal(shape) if low is None else rng.uniform(shape, low, high)
    return Tensor(data, precision=precision)


def _unary(op, shape=(2, 3, 4, 4), low=None, high=None):
    def build(rng: Rng, precision: str) -> Case:
        return op, {"x": _t(rng, shape, precision, low, high)}
    return build


def _binary(op, a=(2, 3, 4, 4), b=(2, 3, 4, 4)):
    def build(rng: Rng, precision: str) -> Case:
        return op, {"a": _t(rng, a, precision), "b": _t(rng, b, precision)}
    return build


def _conv(rng: Rng, precision: str) -> Case:
    x, w, b = _t(rng, (2, 4, 6, 5), precision), _t(rng, (6, 2, 3, 3), precision), _t(rng, (6,), precision)
    return (lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1, dilation=2, groups=2)), {"x": x, "w": w, "b": b}


def _bn(mode: str):
    def build(rng: Rng, precision: str) -> Case:
        x = _t(rng, (3, 4, 3, 3), precision)
        gamma = _t(rng, (4,), precision, 0.5, 1.5)
        beta = _t(rng, (4,), precision)
        mean = _t(rng, (4,), precision, -0.5, 0.5)
        var = _t(rng, (4,), precision, 0.5, 1.5)
        return (lambda x, g, b: ops.batch_norm(x, g, b, mean, var, mode=mode).out), {"x": x, "gamma": gamma, "beta": beta}
    return build


def _concat(rng: Rng, precision: str) -> Case:
    a, b = _t(rng, (2, 2, 3, 3), precision), _t(rng, (2, 3, 3, 3), precision)
    return (lambda a, b: ops.concat([a, b], axis=1)), {"a": a, "b": b}


def _mse(rng: Rng, precision: str) -> Case:
    return ops.mse_loss, {"pred": _t(rng, (2, 3, 2, 2), precision), "target": _t(rng, (2, 3, 2, 2), precision)}


OP_CASES: dict[str, Callable[[Rng, str], Case]] = {
    "conv2d": _conv,
    "batch_norm": _bn("infer"),
    "batch_norm_train": _bn("train"),
    "sigmoid": _unary(ops.sigmoid),
    "silu": _unary(ops.silu),
    "gelu": _unary(ops.gelu),
    "softmax": _unary(lambda x: ops.softmax(x, axis=1)),
    "avg_pool2d": _unary(lambda x: ops.avg_pool2d(x, 3, 2, 1), (2, 2, 5, 5)),
    "max_pool2d": _unary(lambda x: ops.max_pool2d(x, 3, 2, 1), (2, 2, 5, 5)),
    "global_avg_pool": _unary(ops.global_avg_pool),
    "upsample_nearest": _unary(lambda x: ops.upsample_nearest(x, 2), (1, 2, 3, 3)),
    "pad2d": _unary(lambda x: ops.pad2d(x, 1, 0, 2, 1), (1, 2, 3, 3)),
    "sum": _unary(ops.sum),
    "mean": _unary(ops.mean),
    "mean_axis": _unary(lambda x: ops.mean_axis(x, 1)),
    "max_axis": _unary(lambda x: ops.max_axis(x, 1)),
    "concat": _concat,
    "slice_axis": _unary(lambda x: ops.slice_axis(x, 1, 3, axis=1)),
    "split": _unary(lambda x: ops.split(x, [1, 2], axis=1)),
    "reshape": _unary(lambda x: ops.reshape(x, (2, 6, 2, 4))),
    "add": _binary(ops.add, b=(1, 3, 1, 4)),
    "sub": _binary(ops.sub, b=(2, 1, 4, 1)),
    "mul": _binary(ops.mul, b=(1, 3, 4, 4)),
    "scale": _unary(lambda x: ops.scale(x, -1.7)),
    "add_scalar": _unary(lambda x: ops.add_scalar(x, 0.3)),
    "mse_loss": _mse,
}


def randomize_module(mod: Module, rng: Rng) -> None:
    """Random weights, plus non-trivial BN affine terms, statistics and biases."""
    mod.reset_parameters(rng)
    for name, t in mod.named_parameters():
        if name.endswith(("gamma", "beta", "bias")):
            t.data[...] = rng.uniform(t.shape, -1.0, 1.0) + (1.0 if name.endswith("gamma") else 0.0)
    for name, t in mod.named_buffers():
        t.data[...] = rng.uniform(t.shape, -0.5, 0.5) + (1.0 if name.endswith("var") else 0.0)


def _block(factory: Callable[[str], Module], shapes: list[tuple[int, ...]]):
    def build(rng: Rng, precision: str) -> Case:
        mod = factory(precision)
        randomize_module(mod, rng)
        mod.eval()
        xs = {f"x{i}" if len(shapes) > 1 else "x": _t(rng, s, precision) for i, s in enumerate(shapes)}
        k = len(xs)
        return (lambda *a: mod(*a[:k])), {**xs, **dict(mod.named_parameters())}
    return build


BLOCK_CASES: dict[str, Callable[[Rng, str], Case]] = {
    "cbs": _block(lambda p: CBS(3, 4, 3, 2, precision=p), [(2, 3, 5, 5)]),
    "dwr": _block(lambda p: DWR(DwrConfig(3, (1, 2, 3)), precision=p), [(2, 3, 6, 6)]),
    "msdrm": _block(lambda p: MSDRM(MsDrmConfig(4, 4, 3, 1, (1, 2, 3)), precision=p), [(2, 4, 5, 5)]),
    "dcfem": _block(lambda p: DCFEM(DcfemConfig(4, 6, 4, 3, 2), precision=p), [(2, 4, 4, 4), (2, 6, 4, 4)]),
    "lads": _block(lambda p: LADS(LadsConfig(4, 4, 2), precision=p), [(2, 4, 6, 6)]),
}

CASES = {**OP_CASES, **BLOCK_CASES}


def run_case(name: str, seed: int = 0, precision: str = "double", **kwargs) -> GradcheckReport:
    if name not in CASES:
        raise KeyError(name)
    fn, inputs = CASES[name](Rng(seed), precision)
    return gradcheck(fn, inputs, precision, seed=seed, **kwargs)
