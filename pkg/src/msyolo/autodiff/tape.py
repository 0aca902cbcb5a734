"""Reverse-mode differentiation tape.

Operations in :mod:`msyolo.core.ops` append a :class:`Record` to the innermost
active tape whenever one of their inputs requires a gradient::

    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    grads = backward(tape, loss)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..core.tensor import Tensor

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_active: list["Tape"] = []


class TapeError(RuntimeError):
    pass


@dataclass
class Record:
    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn
    ties: int = 0


@dataclass
class Tape:
    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def clear(self) -> None:
        self.records.clear()

    @property
    def ties(self) -> int:
        """Number of non-differentiable ties (equal maxima) seen while recording."""
        return sum(r.ties for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    return _active[-1] if _active else None


def record(op: str, out: Tensor, inputs: Sequence[Tensor], backward: BackwardFn, ties: int = 0) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(Record(op, out, tuple(inputs), backward, ties))
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` for every trainable leaf it depends on.

    Leaves are tensors with ``requires_grad`` set that were not produced by a
    record on ``tape``. Returns a dict keyed by the leaf tensors themselves.
    """
    if loss.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")

    produced = {id(r.out) for r in tape.records}
    if id(loss) not in produced:
        if loss.requires_grad:
            return {loss: np.ones_like(loss.data)}
        raise TapeError("loss was not produced by an operation on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key not in produced:
                leaves[key] = t
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    return {leaves[k]: grads[k] for k in leaves if k in grads}
