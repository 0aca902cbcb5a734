"""Light adaptive-weight downsampling."""

from __future__ import annotations

from dataclasses import dataclass

from ..core import ops
from ..core.tensor import Tensor
from .module import Conv2d, Module


@dataclass(frozen=True)
class LadsConfig:
    in_channels: int
    out_channels: int | None = None
    groups: int = 4
    pad_odd: bool = False

    def __post_init__(self):
        if self.out_channels is None:
            object.__setattr__(self, "out_channels", 2 * self.in_channels)
        g = self.groups
        if g < 1 or (4 * self.out_channels) % g or self.in_channels % g:
            raise ValueError(
                f"groups={g} must divide in_channels={self.in_channels} "
                f"and 4*out_channels={4 * self.out_channels}"
            )


class LADS(Module):
    """Halve H and W with softmax-weighted sub-features.

    Attention branch: 3x3/2 average pool (pad 1), 1x1 conv to 4 maps,
    softmax across the 4 maps at every output location. Feature branch: 3x3/2
    group conv (pad 1) to 4*Cout channels, read as 4 consecutive blocks of
    Cout channels. Output = sum_k w_k * block_k.
    """

    def __init__(self, cfg: LadsConfig, precision: str = "single"):
        super().__init__()
        self.cfg = cfg
        self.attn = self.child("attn", Conv2d(cfg.in_channels, 4, 1, precision=precision))
        self.body = self.child(
            "body", Conv2d(cfg.in_channels, 4 * cfg.out_channels, 3, s=2, p=1, g=cfg.groups, precision=precision)
        )

    def forward(self, x: Tensor, return_parts: bool = False):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"LADS expects {self.cfg.in_channels} input channels, got shape {x.shape}")
        h, w = x.shape[2], x.shape[3]
        if h % 2 or w % 2:
            if not self.cfg.pad_odd:
                raise ValueError(f"LADS needs even spatial extents, got {h}x{w} (enable pad_odd)")
            x = ops.pad2d(x, 0, h % 2, 0, w % 2)
        weights = ops.softmax(self.attn(ops.avg_pool2d(x, 3, 2, 1)), axis=1)
        feats = self.body(x)
        cout = self.cfg.out_channels
        ws = ops.split(weights, [1, 1, 1, 1], axis=1)
        subs = ops.split(feats, [cout] * 4, axis=1)
        out = ops.mul(subs[0], ws[0])
        for s, wk in zip(subs[1:], ws[1:]):
            out = ops.add(out, ops.mul(s, wk))
        if return_parts:
            return out, dict(weights=weights, features=feats, sub_features=subs)
        return out
