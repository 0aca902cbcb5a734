"""Resolved layer graphs: shapes, counts, modules and execution."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

from .._atomic import write_text_atomic
from ..blocks import accounting as acc
from ..blocks.cbs import CBS
from ..blocks.dcfem import DCFEM, DcfemConfig
from ..blocks.dwr import DWR, MSDRM, DwrConfig, MsDrmConfig
from ..blocks.lads import LADS, LadsConfig
from ..blocks.module import Conv2d, Module
from ..core import ops
from ..core.fileio import load_tensor, save_tensor
from ..core.tensor import Rng, ShapeError, Tensor, conv_out_extent
from .config import KINDS, ConfigSemanticError, LayerSpec, format_model_config, split_ref

Shape = tuple[int, int, int, int]

PARAMETERIZED = {"cbs", "conv1x1", "dwr", "msdrm", "dcfem", "lads"}


class GraphShapeError(ConfigSemanticError):
    """Shape incompatibility found while resolving a layer."""


class UnresolvedGraphError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerInfo:
    shapes: tuple[Shape, ...]
    counts: acc.Counts


@dataclass(frozen=True)
class ModelGraph:
    layers: tuple[LayerSpec, ...]
    info: tuple[LayerInfo, ...] | None = None

    @property
    def resolved(self) -> bool:
        return self.info is not None

    def index(self, layer_id: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.id == layer_id:
                return i
        raise KeyError(layer_id)

    def layer(self, layer_id: str) -> LayerSpec:
        return self.layers[self.index(layer_id)]

    def inputs(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.kind == "input"]

    def sinks(self) -> list[str]:
        """References to every output that no layer consumes, in layer order."""
        used = {ref for layer in self.layers for ref in layer.inputs}
        out = []
        for layer in self.layers:
            n = KINDS[layer.kind].outputs
            refs = [layer.id] if n == 1 else [f"{layer.id}.{k}" for k in range(n)]
            out.extend(r for r in refs if r not in used)
        return out

    def shape_of(self, ref: str) -> Shape:
        self._require_resolved()
        src, idx = split_ref(ref)
        return self.info[self.index(src)].shapes[idx or 0]

    def _require_resolved(self) -> None:
        if self.info is None:
            raise UnresolvedGraphError("graph shapes are not resolved; call infer_shapes first")

    def text(self) -> str:
        return format_model_config(self)


# ---------------------------------------------------------------------------
# Per-kind block configuration
# ---------------------------------------------------------------------------


def block_config(layer: LayerSpec, shapes: list[Shape]):
    """Typed block configuration for a parameterized layer given its input shapes."""
    cin = shapes[0][1]
    kind = layer.kind
    if kind == "dwr":
        return DwrConfig(cin, layer.int_list("dilations"), layer.int_list("alloc"))
    if kind == "msdrm":
        return MsDrmConfig(cin, layer.arg("cout"), layer.arg("hidden"), layer.arg("n"),
                           layer.int_list("dilations"), bool(layer.arg("act")))
    if kind == "dcfem":
        return DcfemConfig(cin, shapes[1][1], layer.arg("c"), layer.arg("k"), layer.arg("r"))
    if kind == "lads":
        return LadsConfig(cin, layer.arg("cout"), layer.arg("g"), bool(layer.arg("pad_odd")))
    return None


def _resolve_layer(layer: LayerSpec, shapes: list[Shape]) -> LayerInfo:
    kind = layer.kind
    if kind in ("concat", "add", "dcfem") and len({(s[0], s[2], s[3]) for s in shapes}) > 1:
        raise GraphShapeError(layer.line, f"{kind} {layer.id!r}: spatial mismatch between inputs {shapes}")
    x = shapes[0]
    n, c, h, w = x
    elems = n * c * h * w
    if kind == "cbs":
        cout, k, s, p, g, d = (layer.arg(key) for key in ("cout", "k", "s", "p", "g", "d"))
        if c % g or cout % g:
            raise GraphShapeError(layer.line, f"cbs {layer.id!r}: groups={g} must divide {c} and {cout}")
        counts, out = acc.cbs_counts(c, cout, k, s, p, g, d, bool(layer.arg("act")), x)
        return LayerInfo((out,), counts)
    if kind == "conv1x1":
        cout, bias = layer.arg("cout"), bool(layer.arg("bias"))
        return LayerInfo(((n, cout, h, w),), acc.conv_counts(c, cout, 1, 1, n, h, w, bias))
    if kind == "dwr":
        counts, out = acc.dwr_counts(block_config(layer, shapes), x)
        return LayerInfo((out,), counts)
    if kind == "msdrm":
        counts, out = acc.msdrm_counts(block_config(layer, shapes), x)
        return LayerInfo((out,), counts)
    if kind == "dcfem":
        counts, outs = acc.dcfem_counts(block_config(layer, shapes), x)
        return LayerInfo(outs, counts)
    if kind == "lads":
        cfg = block_config(layer, shapes)
        if (h % 2 or w % 2) and not cfg.pad_odd:
            raise GraphShapeError(layer.line, f"lads {layer.id!r}: odd extent {h}x{w} (set pad_odd=1)")
        counts, out = acc.lads_counts(cfg, x)
        return LayerInfo((out,), counts)
    if kind in ("avgpool", "maxpool"):
        k, p = layer.arg("k"), layer.arg("p")
        s = layer.arg("s") or k
        if kind == "maxpool" and p > k // 2:
            raise GraphShapeError(layer.line, f"maxpool {layer.id!r}: padding {p} exceeds kernel // 2")
        ho, wo = conv_out_extent(h, k, s, p), conv_out_extent(w, k, s, p)
        return LayerInfo(((n, c, ho, wo),), acc.Counts(flops=k * k * n * c * ho * wo))
    if kind == "upsample-nearest":
        f = layer.arg("factor")
        if f < 1:
            raise GraphShapeError(layer.line, "upsample factor must be >= 1")
        return LayerInfo(((n, c, h * f, w * f),), acc.Counts())
    if kind == "concat":
        return LayerInfo(((n, sum(s[1] for s in shapes), h, w),), acc.Counts())
    if kind == "add":
        if len(shapes) == 1:
            return LayerInfo((x,), acc.elementwise(elems))
        if len(set(shapes)) > 1:
            raise GraphShapeError(layer.line, f"add {layer.id!r}: inputs differ in shape {shapes}")
        extra = 0 if layer.arg("value", float) == 0 else 1
        return LayerInfo((x,), acc.elementwise((len(shapes) - 1 + extra) * elems))
    raise AssertionError(kind)


def infer_shapes(graph: ModelGraph, input_shape: Shape | Mapping[str, Shape] | None = None) -> ModelGraph:
    """Annotate every layer with its output shape(s) and closed-form counts.

    ``input_shape`` overrides declared input extents: a single shape when the
    graph has one input, or a mapping from input id to shape. The override is
    written into the returned graph, so resolving again is a no-op.
    """
    inputs = graph.inputs()
    if input_shape is not None and not isinstance(input_shape, Mapping):
        if len(inputs) != 1:
            raise ValueError("graph has several inputs; pass a mapping from input id to shape")
        input_shape = {inputs[0].id: tuple(input_shape)}
    overrides = dict(input_shape or {})
    unknown = set(overrides) - {layer.id for layer in inputs}
    if unknown:
        raise ValueError(f"no input layer named {sorted(unknown)}")

    layers, info = [], []
    out_shapes: dict[str, tuple[Shape, ...]] = {}
    for layer in graph.layers:
        if layer.kind == "input":
            shape = tuple(int(v) for v in overrides.get(layer.id, layer.shape))
            if len(shape) != 4 or min(shape) < 1:
                raise GraphShapeError(layer.line, f"input {layer.id!r}: bad shape {shape}")
            layer = replace(layer, shape=shape)
            li = LayerInfo((shape,), acc.Counts())
        else:
            shapes = []
            for ref in layer.inputs:
                src, idx = split_ref(ref)
                shapes.append(out_shapes[src][idx or 0])
            try:
                li = _resolve_layer(layer, shapes)
            except GraphShapeError:
                raise
            except ValueError as exc:  # ShapeError and block config validation
                raise GraphShapeError(layer.line, f"{layer.kind} {layer.id!r}: {exc}") from None
        out_shapes[layer.id] = li.shapes
        layers.append(layer)
        info.append(li)
    return ModelGraph(tuple(layers), tuple(info))


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountReport:
    per_layer: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.per_layer.values())


def _counts(graph: ModelGraph, field: str) -> CountReport:
    graph._require_resolved()
    return CountReport({layer.id: getattr(li.counts, field) for layer, li in zip(graph.layers, graph.info)})


def count_params(graph: ModelGraph) -> CountReport:
    """Learned parameters per layer (running BN statistics excluded)."""
    return _counts(graph, "params")


def count_buffers(graph: ModelGraph) -> CountReport:
    """Running BN statistics per layer."""
    return _counts(graph, "buffers")


def count_flops(graph: ModelGraph, input_shape: Shape | Mapping[str, Shape] | None = None) -> CountReport:
    """FLOPs per layer; resolves first when ``input_shape`` is given."""
    if input_shape is not None:
        graph = infer_shapes(graph, input_shape)
    return _counts(graph, "flops")


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


class GraphModel(Module):
    """Modules for every parameterized layer, children named by layer id.

    Weight names are ``<layer>.<sublayer>.<tensor>``, e.g. ``d.body.weight``.
    """

    def __init__(self, graph: ModelGraph, precision: str = "single"):
        super().__init__()
        if not graph.resolved:
            graph = infer_shapes(graph)
        self.graph = graph
        self.precision = precision
        self.blocks: dict[str, Module] = {}
        for layer in graph.layers:
            if layer.kind in PARAMETERIZED:
                shapes = [graph.shape_of(ref) for ref in layer.inputs]
                self.blocks[layer.id] = self.child(layer.id, self._build(layer, shapes))

    def _build(self, layer: LayerSpec, shapes: list[Shape]) -> Module:
        cin, prec = shapes[0][1], self.precision
        if layer.kind == "cbs":
            return CBS(cin, layer.arg("cout"), layer.arg("k"), layer.arg("s"), layer.arg("p"),
                       layer.arg("g"), layer.arg("d"), bool(layer.arg("act")), precision=prec)
        if layer.kind == "conv1x1":
            return Conv2d(cin, layer.arg("cout"), 1, bias=bool(layer.arg("bias")), precision=prec)
        cfg = block_config(layer, shapes)
        cls = {"dwr": DWR, "msdrm": MSDRM, "dcfem": DCFEM, "lads": LADS}[layer.kind]
        return cls(cfg, precision=prec)

    def forward(self, inputs: Tensor | Mapping[str, Tensor]) -> dict[str, Tensor]:
        """Run every layer in order; returns sink reference -> tensor."""
        declared = self.graph.inputs()
        if isinstance(inputs, Tensor):
            if len(declared) != 1:
                raise ValueError("graph has several inputs; pass a mapping from input id to tensor")
            inputs = {declared[0].id: inputs}
        values: dict[str, tuple[Tensor, ...]] = {}
        for layer in self.graph.layers:
            if layer.kind == "input":
                if layer.id not in inputs:
                    raise ValueError(f"no tensor supplied for input {layer.id!r}")
                x = inputs[layer.id]
                if x.ndim != 4 or x.shape[1:] != layer.shape[1:]:
                    raise ShapeError(f"input {layer.id!r} expects (N, {', '.join(map(str, layer.shape[1:]))}), "
                                     f"got {x.shape}")
                values[layer.id] = (x,)
                continue
            args = []
            for ref in layer.inputs:
                src, idx = split_ref(ref)
                args.append(values[src][idx or 0])
            out = self._run(layer, args)
            values[layer.id] = out if isinstance(out, tuple) else (out,)
        result = {}
        for ref in self.graph.sinks():
            src, idx = split_ref(ref)
            result[ref] = values[src][idx or 0]
        return result

    def _run(self, layer: LayerSpec, args: list[Tensor]):
        kind = layer.kind
        if kind in PARAMETERIZED:
            return tuple(self.blocks[layer.id](*args)) if kind == "dcfem" else self.blocks[layer.id](*args)
        x = args[0]
        if kind == "avgpool":
            return ops.avg_pool2d(x, layer.arg("k"), layer.arg("s"), layer.arg("p"))
        if kind == "maxpool":
            return ops.max_pool2d(x, layer.arg("k"), layer.arg("s"), layer.arg("p"))
        if kind == "upsample-nearest":
            return ops.upsample_nearest(x, layer.arg("factor"))
        if kind == "concat":
            return ops.concat(args, axis=1)
        if kind == "add":
            if len(args) == 1:
                return ops.add_scalar(x, layer.arg("value", float))
            for y in args[1:]:
                x = ops.add(x, y)
            value = layer.arg("value", float)
            return x if value == 0 else ops.add_scalar(x, value)
        raise AssertionError(kind)


def init_model(graph: ModelGraph, seed: int = 0, precision: str = "single") -> GraphModel:
    """Build a model and draw every weight from one seeded stream in layer order."""
    model = GraphModel(graph, precision)
    model.reset_parameters(Rng(seed))
    return model


def graph_forward(graph: ModelGraph, weights: Mapping[str, Tensor], x: Tensor | Mapping[str, Tensor]
                  ) -> dict[str, Tensor]:
    """Inference-mode execution with the given weights; returns the sink tensors."""
    first = x if isinstance(x, Tensor) else next(iter(x.values()))
    model = GraphModel(graph, first.precision)
    model.load_state_dict(weights)
    model.eval()
    return model(x)


# ---------------------------------------------------------------------------
# Weight directories
# ---------------------------------------------------------------------------

MANIFEST = "manifest.txt"
WEIGHT_SUFFIX = ".mst"


def save_weights(directory: str | os.PathLike, state: Mapping[str, Tensor], graph: ModelGraph | None = None) -> None:
    """One tensor file per weight plus a plain-text manifest.

    Manifest lines are ``tensor<TAB>name<TAB>precision<TAB>shape`` followed by
    ``config<TAB><layer line>`` for the canonical model configuration.
    """
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    lines = ["# msyolo weights v1"]
    for name in sorted(state):
        t = state[name]
        save_tensor(path / f"{name}{WEIGHT_SUFFIX}", t)
        lines.append(f"tensor\t{name}\t{t.precision}\t{'x'.join(map(str, t.shape))}")
    if graph is not None:
        lines.extend(f"config\t{line}" for line in format_model_config(graph).splitlines())
    write_text_atomic(path / MANIFEST, "\n".join(lines) + "\n")


def load_weights(directory: str | os.PathLike) -> dict[str, Tensor]:
    path = Path(directory)
    if not path.is_dir():
        raise FileNotFoundError(f"weights directory {str(path)!r} does not exist")
    return {p.name[: -len(WEIGHT_SUFFIX)]: load_tensor(p) for p in sorted(path.glob(f"*{WEIGHT_SUFFIX}"))}
