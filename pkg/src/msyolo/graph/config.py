"""Line-oriented model configuration.

One layer per line::

    <kind> <id> [from=<ref>[,<ref>...]] [key=value ...]

``input`` lines take four positional extents instead (``input x 1 16 32 32``).
A reference is a layer id, or ``id.k`` to pick output ``k`` of a layer with
several outputs (``dcfem``). ``#`` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

ID_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
REF_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_\-]*)(?:\.(\d+))?$")


@dataclass(frozen=True)
class KindSpec:
    min_inputs: int
    max_inputs: int | None
    required: tuple[str, ...] = ()
    optional: dict[str, str | None] = field(default_factory=dict)
    outputs: int = 1


KINDS: dict[str, KindSpec] = {
    "input": KindSpec(0, 0),
    "cbs": KindSpec(1, 1, ("cout",), {"k": "1", "s": "1", "p": None, "g": "1", "d": "1", "act": "1"}),
    "conv1x1": KindSpec(1, 1, ("cout",), {"bias": "1"}),
    "dwr": KindSpec(1, 1, (), {"dilations": "1,3,5", "alloc": None}),
    "msdrm": KindSpec(1, 1, ("cout",), {"hidden": None, "n": "1", "dilations": "1,3,5", "act": "1"}),
    "dcfem": KindSpec(2, 2, (), {"c": None, "k": "7", "r": "4"}, outputs=2),
    "lads": KindSpec(1, 1, (), {"cout": None, "g": "4", "pad_odd": "0"}),
    "avgpool": KindSpec(1, 1, (), {"k": "2", "s": None, "p": "0"}),
    "maxpool": KindSpec(1, 1, (), {"k": "2", "s": None, "p": "0"}),
    "upsample-nearest": KindSpec(1, 1, (), {"factor": "2"}),
    "concat": KindSpec(2, None),
    "add": KindSpec(1, None, (), {"value": "0"}),
}


class ConfigError(ValueError):
    def __init__(self, line: int, message: str, source: str | None = None):
        prefix = f"{source}: " if source else ""
        super().__init__(f"{prefix}line {line}: {message}")
        self.line = line
        self.message = message
        self.source = source


class ConfigSyntaxError(ConfigError):
    pass


class ConfigSemanticError(ConfigError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    id: str
    inputs: tuple[str, ...] = ()
    args: tuple[tuple[str, str], ...] = ()
    shape: tuple[int, ...] = ()  # only for ``input``
    line: int = 0

    def arg(self, key: str, cast=int):
        """Typed argument value with the kind's default; None when unset."""
        value = dict(self.args).get(key, KINDS[self.kind].optional.get(key))
        if value is None:
            return None
        try:
            return cast(value)
        except ValueError:
            raise ConfigSyntaxError(self.line, f"bad value {key}={value!r} for {self.kind}") from None

    def int_list(self, key: str) -> tuple[int, ...] | None:
        raw = self.arg(key, str)
        if raw is None:
            return None
        try:
            return tuple(int(v) for v in raw.split(","))
        except ValueError:
            raise ConfigSyntaxError(self.line, f"bad integer list {key}={raw!r}") from None


def split_ref(ref: str) -> tuple[str, int | None]:
    m = REF_RE.match(ref)
    if not m:
        raise ValueError(f"bad reference {ref!r}")
    return m.group(1), None if m.group(2) is None else int(m.group(2))


def _parse_line(tokens: list[str], lineno: int) -> LayerSpec:
    kind = tokens[0]
    if kind not in KINDS:
        raise ConfigSyntaxError(lineno, f"unknown layer kind {kind!r}")
    if len(tokens) < 2 or not ID_RE.match(tokens[1]):
        raise ConfigSyntaxError(lineno, f"{kind} needs a layer id")
    lid = tokens[1]
    spec = KINDS[kind]
    if kind == "input":
        if len(tokens) != 6:
            raise ConfigSyntaxError(lineno, "input takes exactly four extents: N C H W")
        try:
            shape = tuple(int(t) for t in tokens[2:])
        except ValueError:
            raise ConfigSyntaxError(lineno, "input extents must be integers") from None
        if any(s < 1 for s in shape):
            raise ConfigSyntaxError(lineno, "input extents must be >= 1")
        return LayerSpec(kind, lid, shape=shape, line=lineno)

    inputs: tuple[str, ...] = ()
    args: list[tuple[str, str]] = []
    seen = set()
    for tok in tokens[2:]:
        key, eq, value = tok.partition("=")
        if not eq or not key or not value:
            raise ConfigSyntaxError(lineno, f"expected key=value, got {tok!r}")
        if key in seen:
            raise ConfigSyntaxError(lineno, f"duplicate argument {key!r}")
        seen.add(key)
        if key == "from":
            inputs = tuple(value.split(","))
            for ref in inputs:
                if not REF_RE.match(ref):
                    raise ConfigSyntaxError(lineno, f"bad layer reference {ref!r}")
        elif key in spec.required or key in spec.optional:
            args.append((key, value))
        else:
            raise ConfigSyntaxError(lineno, f"unknown argument {key!r} for {kind}")
    for key in spec.required:
        if key not in seen:
            raise ConfigSyntaxError(lineno, f"{kind} requires {key}=")
    layer = LayerSpec(kind, lid, inputs, tuple(args), line=lineno)
    # validate types eagerly so syntax errors carry the line
    for key, _ in args:
        if key in ("dilations", "alloc"):
            layer.int_list(key)
        elif key != "value":
            layer.arg(key)
        else:
            layer.arg(key, float)
    return layer


def parse_model_config(text: str):
    """Parse config text into an unresolved :class:`~msyolo.graph.model.ModelGraph`."""
    from .model import ModelGraph

    layers: list[LayerSpec] = []
    outputs: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        layer = _parse_line(line.split(), lineno)
        if layer.id in outputs:
            raise ConfigSemanticError(lineno, f"duplicate layer id {layer.id!r}")
        spec = KINDS[layer.kind]
        n = len(layer.inputs)
        if n < spec.min_inputs or (spec.max_inputs is not None and n > spec.max_inputs):
            want = (f"exactly {spec.min_inputs}" if spec.min_inputs == spec.max_inputs
                    else f"at least {spec.min_inputs}")
            raise ConfigSemanticError(lineno, f"{layer.kind} takes {want} input(s), got {n}")
        for ref in layer.inputs:
            src, idx = split_ref(ref)
            if src not in outputs:
                raise ConfigSemanticError(lineno, f"reference to undefined layer {src!r}")
            count = outputs[src]
            if idx is None and count > 1:
                raise ConfigSemanticError(lineno, f"{src!r} has {count} outputs; use {src}.0 .. {src}.{count - 1}")
            if idx is not None and idx >= count:
                raise ConfigSemanticError(lineno, f"{src!r} has no output {idx}")
        outputs[layer.id] = spec.outputs
        layers.append(layer)
    if not any(layer.kind == "input" for layer in layers):
        raise ConfigSemanticError(max(len(text.splitlines()), 1), "config declares no input layer")
    return ModelGraph(tuple(layers))


def format_model_config(graph) -> str:
    """Canonical text form; parses back to an equivalent graph."""
    lines = []
    for layer in graph.layers:
        if layer.kind == "input":
            lines.append(f"input {layer.id} " + " ".join(str(s) for s in layer.shape))
            continue
        parts = [layer.kind, layer.id]
        if layer.inputs:
            parts.append("from=" + ",".join(layer.inputs))
        parts.extend(f"{k}={v}" for k, v in sorted(layer.args))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
