"""Synthetic memorization harness exercising the blocks end to end."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import OptimState, Tape, adamw_step, backward, cosine_lr
from ..blocks.module import Conv2d
from ..core import ops
from ..core.tensor import Rng, Tensor
from .model import GraphModel, ModelGraph, infer_shapes


class TrainingDiverged(ArithmeticError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class ToyTask:
    """Fixed batch of random inputs and targets, fitted with MSE.

    Targets live at the sink resolution with ``target_channels`` channels and
    are produced from the sink by a 1x1 projection head.
    """

    samples: int = 8
    target_channels: int = 1
    zero_target: bool = False
    zero_init_head: bool = False
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 0.01
    precision: str = "single"

    def __post_init__(self):
        if not 1 <= self.samples <= 8:
            raise ValueError("a toy task holds between 1 and 8 samples")
        if self.target_channels < 1:
            raise ValueError("target_channels must be >= 1")


def train_toy(graph: ModelGraph, task: ToyTask = ToyTask(), steps: int = 500, seed: int = 0) -> list[float]:
    """Fit the task with AdamW under a cosine schedule; returns the loss before each update.

    All draws come from one stream seeded with ``seed``: model weights in layer
    order, then the head, then inputs, then targets.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    inputs = graph.inputs()
    if len(inputs) != 1:
        raise ValueError("toy training needs a graph with exactly one input")
    sinks = graph.sinks()
    if len(sinks) != 1:
        raise ValueError(f"toy training needs exactly one sink, found {sinks}")
    shape = (task.samples,) + inputs[0].shape[1:]
    graph = infer_shapes(graph, shape)
    n, c, h, w = graph.shape_of(sinks[0])

    rng = Rng(seed)
    model = GraphModel(graph, task.precision)
    model.reset_parameters(rng)
    head = Conv2d(c, task.target_channels, 1, precision=task.precision)
    if not task.zero_init_head:
        head.reset_parameters(rng)
    x = Tensor(rng.normal(shape), precision=task.precision)
    tshape = (n, task.target_channels, h, w)
    target = Tensor(np.zeros(tshape) if task.zero_target else rng.normal(tshape), precision=task.precision)

    params = dict(model.named_parameters())
    params.update(head.named_parameters("head."))
    for t in params.values():
        t.requires_grad = True
    model.train()
    state = OptimState(lr=task.lr_max, weight_decay=task.weight_decay)
    losses: list[float] = []
    for step in range(steps):
        with Tape() as tape:
            out = model(x)[sinks[0]]
            loss = ops.mse_loss(head(out), target)
        value = float(loss.item())
        if not math.isfinite(value):
            raise TrainingDiverged(step, value)
        losses.append(value)
        grads = backward(tape, loss)
        lr = cosine_lr(step, steps, task.lr_max, task.lr_min)
        new, state = adamw_step({k: t.data for k, t in params.items()},
                                {k: grads[t] for k, t in params.items() if t in grads}, state, lr=lr)
        for k, t in params.items():
            t.data = new[k].astype(t.dtype, copy=False)
    return losses
