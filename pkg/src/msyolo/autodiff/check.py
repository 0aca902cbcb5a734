"""Central finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..core import ops
from ..core.tensor import Rng, Tensor
from .tape import Tape, backward

# (step, tolerance) per precision
DEFAULTS = {"single": (1e-3, 1e-2), "double": (1e-6, 1e-5)}

# The numeric side runs one precision level above the analytic side so that
# its own roundoff (about eps / h) stays well below the tolerance.
ORACLE_DTYPES = {"single": np.dtype(np.float64), "double": np.dtype(np.longdouble)}


class GradcheckError(ArithmeticError):
    pass


@dataclass
class LeafReport:
    name: str
    shape: tuple[int, ...]
    max_rel_err: float
    status: str  # "pass", "fail" or "tie"

    def line(self) -> str:
        shape = "x".join(str(s) for s in self.shape) or "scalar"
        return f"{self.name}\t{shape}\t{self.max_rel_err:.3e}\t{self.status}"


@dataclass
class GradcheckReport:
    leaves: list[LeafReport] = field(default_factory=list)
    ties: int = 0

    @property
    def max_rel_err(self) -> float:
        return max((leaf.max_rel_err for leaf in self.leaves), default=0.0)

    @property
    def passed(self) -> bool:
        return all(leaf.status != "fail" for leaf in self.leaves)

    def text(self) -> str:
        return "".join(leaf.line() + "\n" for leaf in self.leaves)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|, 1e-8), elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def _outputs(result) -> list[Tensor]:
    if isinstance(result, Tensor):
        return [result]
    return list(result)


def gradcheck(
    fn: Callable[..., Tensor | Sequence[Tensor]],
    inputs: Mapping[str, Tensor],
    precision: str = "double",
    h: float | None = None,
    tolerance: float | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    ``fn`` is called as ``fn(*inputs.values())`` and may return one tensor or
    a sequence of tensors; outputs are reduced to a scalar with fixed random
    projection weights drawn from ``seed``. Every input becomes a trainable
    leaf and is perturbed in place, so pass the very tensors ``fn`` reads
    (for a module, its parameters) to check them.

    The analytic gradient is computed in ``precision``. The numeric gradient
    perturbs each element by +-h and is evaluated with the leaves widened to
    float64 (single) or extended precision (double).

    If the recorded forward hit a non-differentiable tie (equal maxima), a
    leaf that exceeds the tolerance is reported as ``"tie"``, not ``"fail"``.
    """
    h0, tol0 = DEFAULTS[precision]
    h = h0 if h is None else h
    tolerance = tol0 if tolerance is None else tolerance
    leaves = list(inputs.values())
    for name, t in inputs.items():
        if t.precision != precision:
            raise GradcheckError(f"input {name!r} is {t.precision}, expected {precision}")
        t.requires_grad = True

    rng = Rng(seed)
    with Tape() as tape:
        outs = _outputs(fn(*leaves))
        proj = [Tensor(rng.uniform(o.shape, -1.0, 1.0), precision=precision) for o in outs]
        loss = ops.sum(ops.mul(outs[0], proj[0]))
        for o, p in zip(outs[1:], proj[1:]):
            loss = ops.add(loss, ops.sum(ops.mul(o, p)))
    grads = backward(tape, loss)

    wide = ORACLE_DTYPES[precision]
    weights = [p.data.astype(wide) for p in proj]
    saved = [t.data for t in leaves]
    report = GradcheckReport(ties=tape.ties)
    try:
        for t in leaves:
            t.data = t.data.astype(wide)
        with ops.promoting():
            for name, leaf in inputs.items():
                numeric = _numeric_grad(fn, leaves, leaf, weights, h)
                analytic = grads.get(leaf)
                analytic = np.zeros(leaf.shape) if analytic is None else analytic.astype(np.float64)
                if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
                    raise GradcheckError(f"non-finite gradient for {name!r}")
                err = float(relative_error(analytic, numeric).max())
                status = "pass" if err <= tolerance else ("tie" if report.ties else "fail")
                report.leaves.append(LeafReport(name, tuple(leaf.shape), err, status))
    finally:
        for t, d in zip(leaves, saved):
            t.data = d
    return report


def _numeric_grad(fn, leaves, leaf, weights, h) -> np.ndarray:
    flat = leaf.data.reshape(-1)
    out = np.empty(flat.size, dtype=np.float64)
    step = flat.dtype.type(h)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = _outputs(fn(*leaves))
        flat[i] = orig - step
        minus = _outputs(fn(*leaves))
        flat[i] = orig
        # difference per output element before projecting
        diff = sum(np.sum((a.data - b.data) * w) for a, b, w in zip(plus, minus, weights))
        out[i] = float(diff / (2 * step))
    return out.reshape(leaf.shape)
