from __future__ import annotations

from ..core import ops
from ..core.tensor import Tensor
from .module import BatchNorm2d, Conv2d, Module


class CBS(Module):
    """Conv (no bias) -> BatchNorm -> SiLU. ``act=False`` drops the SiLU."""

    def __init__(self, cin: int, cout: int, k: int = 1, s: int = 1, p: int | None = None,
                 g: int = 1, d: int = 1, act: bool = True, precision: str = "single"):
        super().__init__()
        self.act = act
        self.conv = self.child("conv", Conv2d(cin, cout, k, s, p, g, d, bias=False, precision=precision))
        self.bn = self.child("bn", BatchNorm2d(cout, precision=precision))

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return ops.silu(y) if self.act else y
