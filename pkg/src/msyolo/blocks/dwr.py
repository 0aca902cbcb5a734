"""Dilation-wise residual unit and the multi-scale dilated residual module."""

from __future__ import annotations

from dataclasses import dataclass

from ..core import ops
from ..core.tensor import Tensor
from .cbs import CBS
from .module import BatchNorm2d, Conv2d, Module


@dataclass(frozen=True)
class DwrConfig:
    channels: int
    dilations: tuple[int, ...] = (1, 3, 5)
    allocation: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if not self.dilations:
            raise ValueError("dilation list must not be empty")
        if any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be >= 1, got {self.dilations}")
        if self.allocation is not None:
            alloc = tuple(int(a) for a in self.allocation)
            object.__setattr__(self, "allocation", alloc)
            if len(alloc) != len(self.dilations):
                raise ValueError("one channel allocation per dilation is required")
            if any(a < 1 for a in alloc) or sum(alloc) != self.channels:
                raise ValueError(f"allocation {alloc} must be positive and sum to {self.channels}")
        elif self.channels < len(self.dilations):
            raise ValueError(f"{self.channels} channels cannot feed {len(self.dilations)} branches")

    @property
    def branch_channels(self) -> tuple[int, ...]:
        """Explicit allocation, or an equal split with the remainder on the leading branches."""
        if self.allocation is not None:
            return self.allocation
        q, r = divmod(self.channels, len(self.dilations))
        return tuple(q + (1 if i < r else 0) for i in range(len(self.dilations)))


class DWR(Module):
    """Region stage (3x3 CBS) followed by per-group dilated depthwise 3x3
    convolutions; branches are concatenated, batch-normalized, mixed by a 1x1
    convolution and added back onto the input."""

    def __init__(self, cfg: DwrConfig, precision: str = "single"):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.region = self.child("region", CBS(c, c, 3, precision=precision))
        self.branches = [
            self.child(f"branch{i}", Conv2d(ci, ci, 3, p=d, g=ci, d=d, bias=False, precision=precision))
            for i, (ci, d) in enumerate(zip(cfg.branch_channels, cfg.dilations))
        ]
        self.bn = self.child("bn", BatchNorm2d(c, precision=precision))
        self.fuse = self.child("fuse", Conv2d(c, c, 1, bias=False, precision=precision))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.channels:
            raise ValueError(f"DWR expects {self.cfg.channels} channels, got shape {x.shape}")
        r = self.region(x)
        parts = ops.split(r, self.cfg.branch_channels, axis=1)
        y = ops.concat([b(p) for b, p in zip(self.branches, parts)], axis=1)
        return ops.add(x, self.fuse(self.bn(y)))


@dataclass(frozen=True)
class MsDrmConfig:
    in_channels: int
    out_channels: int
    hidden: int | None = None
    n: int = 1
    dilations: tuple[int, ...] = (1, 3, 5)
    act: bool = True

    def __post_init__(self):
        if self.hidden is None:
            object.__setattr__(self, "hidden", max(self.out_channels // 2, 1))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.hidden < len(self.dilations):
            raise ValueError(f"hidden width {self.hidden} is smaller than the {len(self.dilations)} DWR branches")

    @property
    def concat_channels(self) -> int:
        return self.hidden * (2 + self.n)


class MSDRM(Module):
    """Split-transform-merge wrapper whose inner units are DWR blocks.

    1x1 CBS to 2*hidden, split into halves, run ``n`` DWR units in sequence
    on the second half (keeping every intermediate), concatenate all parts
    and project with a 1x1 CBS.
    """

    def __init__(self, cfg: MsDrmConfig, precision: str = "single"):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.cv1 = self.child("cv1", CBS(cfg.in_channels, 2 * h, 1, act=cfg.act, precision=precision))
        self.units = [
            self.child(f"m{i}", DWR(DwrConfig(h, cfg.dilations), precision=precision)) for i in range(cfg.n)
        ]
        self.cv2 = self.child("cv2", CBS(cfg.concat_channels, cfg.out_channels, 1, act=cfg.act, precision=precision))

    def forward(self, x: Tensor) -> Tensor:
        h = self.cfg.hidden
        parts = ops.split(self.cv1(x), [h, h], axis=1)
        for unit in self.units:
            parts.append(unit(parts[-1]))
        return self.cv2(ops.concat(parts, axis=1))
