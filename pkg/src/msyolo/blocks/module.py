"""Minimal module tree: named parameters, buffers and children."""

from __future__ import annotations

from typing import Iterator, Mapping

from ..core import ops
from ..core.tensor import Rng, Tensor, rng_fill


class MissingWeightError(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"missing weight tensor {self.name!r}"


class Module:
    """Base class for parameterized units.

    Parameters are trainable tensors, buffers are non-trainable state (BN
    running statistics). Both are addressed by dotted names, e.g.
    ``cv1.bn.gamma``. Child modules are registered in construction order,
    which fixes the order of initialization draws.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}
        self.training = False

    def param(self, name: str, tensor: Tensor) -> Tensor:
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def buffer(self, name: str, tensor: Tensor) -> Tensor:
        tensor.name = name
        self._buffers[name] = tensor
        return tensor

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, mod in self._children.items():
            yield from mod.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self._buffers.items():
            yield prefix + name, t
        for cname, mod in self._children.items():
            yield from mod.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, Tensor]:
        state = dict(self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Mapping[str, Tensor], prefix: str = "") -> None:
        """Copy tensors in; raises :class:`MissingWeightError` naming the first gap."""
        for name, t in self._params.items():
            self._params[name] = self._take(state, prefix + name, t, trainable=True)
        for name, t in self._buffers.items():
            self._buffers[name] = self._take(state, prefix + name, t, trainable=False)
        for cname, mod in self._children.items():
            mod.load_state_dict(state, f"{prefix}{cname}.")

    @staticmethod
    def _take(state, key, current: Tensor, trainable: bool) -> Tensor:
        if key not in state:
            raise MissingWeightError(key)
        src = state[key]
        if src.shape != current.shape:
            raise ValueError(f"weight {key!r} has shape {src.shape}, expected {current.shape}")
        return Tensor(src.data.copy(), requires_grad=trainable and current.requires_grad,
                      name=current.name, precision=current.precision)

    def reset_parameters(self, rng: Rng) -> None:
        for mod in self._children.values():
            mod.reset_parameters(rng)

    def to(self, precision: str) -> "Module":
        for d in (self._params, self._buffers):
            for name, t in d.items():
                d[name] = t.to(precision)
        for mod in self._children.values():
            mod.to(precision)
        return self

    def requires_grad_(self, flag: bool = True) -> "Module":
        for _, t in self.named_parameters():
            t.requires_grad = flag
        return self

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for mod in self._children.values():
            mod.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def num_buffers(self) -> int:
        return sum(t.size for _, t in self.named_buffers())

    def forward(self, *args):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    """Plain convolution; weight (Cout, Cin/groups, k, k), optional bias."""

    def __init__(self, cin: int, cout: int, k: int = 1, s: int = 1, p: int | None = None,
                 g: int = 1, d: int = 1, bias: bool = True, precision: str = "single"):
        super().__init__()
        if cin % g or cout % g:
            raise ValueError(f"groups={g} must divide in={cin} and out={cout} channels")
        self.cin, self.cout, self.k, self.s, self.g, self.d = cin, cout, k, s, g, d
        self.p = d * (k - 1) // 2 if p is None else p
        self.bias = bias
        self.param("weight", rng_fill(Rng(0), (cout, cin // g, k, k), "constant", precision=precision))
        if bias:
            self.param("bias", rng_fill(Rng(0), (cout,), "constant", precision=precision))

    def reset_parameters(self, rng: Rng) -> None:
        w = self._params["weight"]
        w.data[...] = rng_fill(rng, w.shape, "kaiming-uniform", precision=w.precision).data
        if self.bias:
            self._params["bias"].data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self._params["weight"], self._params.get("bias"),
                          stride=self.s, padding=self.p, dilation=self.d, groups=self.g)


class BatchNorm2d(Module):
    def __init__(self, c: int, eps: float = 1e-5, momentum: float = 0.1, precision: str = "single"):
        super().__init__()
        self.c, self.eps, self.momentum = c, eps, momentum
        self.param("gamma", rng_fill(Rng(0), (c,), "constant", value=1.0, precision=precision))
        self.param("beta", rng_fill(Rng(0), (c,), "constant", value=0.0, precision=precision))
        self.buffer("running_mean", rng_fill(Rng(0), (c,), "constant", value=0.0, precision=precision))
        self.buffer("running_var", rng_fill(Rng(0), (c,), "constant", value=1.0, precision=precision))

    def forward(self, x: Tensor) -> Tensor:
        res = ops.batch_norm(
            x, self._params["gamma"], self._params["beta"],
            self._buffers["running_mean"], self._buffers["running_var"],
            eps=self.eps, mode="train" if self.training else "infer", momentum=self.momentum,
        )
        if self.training:
            self.buffer("running_mean", res.running_mean)
            self.buffer("running_var", res.running_var)
        return res.out


def set_identity_bn(bn: BatchNorm2d) -> None:
    """gamma=1, beta=0, mean=0, var=1."""
    for name, value in (("gamma", 1.0), ("beta", 0.0)):
        bn._params[name].data[...] = value
    bn._buffers["running_mean"].data[...] = 0.0
    bn._buffers["running_var"].data[...] = 1.0
