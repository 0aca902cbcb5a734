"""Dynamic cross-path feature enhancement.

Both inputs are aligned to C channels with 1x1 convolutions and concatenated
(2C channels). A local branch (depthwise 3x3 then 1x1) and a global SE-style
branch (global pool, 1x1, GELU, 1x1) are blended per pixel with two softmax
weights produced by a 1x1-GELU-1x1 path. The blend is recalibrated by channel
attention then spatial attention, added back to itself, and split into two
C-wide halves that are added onto the aligned backbone and neck inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..core import ops
from ..core.tensor import Tensor
from .module import Conv2d, Module


@dataclass(frozen=True)
class DcfemConfig:
    backbone_channels: int
    neck_channels: int
    channels: int | None = None
    attn_kernel: int = 7
    reduction: int = 4

    def __post_init__(self):
        if self.channels is None:
            object.__setattr__(self, "channels", self.backbone_channels)
        if self.reduction < 1 or self.channels < self.reduction:
            raise ValueError(f"channels={self.channels} must be >= reduction ratio {self.reduction}")
        if self.attn_kernel < 1 or self.attn_kernel % 2 == 0:
            raise ValueError(f"spatial attention kernel must be odd, got {self.attn_kernel}")

    @property
    def hidden(self) -> int:
        return max(2 * self.channels // self.reduction, 1)


class DCFEM(Module):
    def __init__(self, cfg: DcfemConfig, precision: str = "single"):
        super().__init__()
        self.cfg = cfg
        c2, hid, k = 2 * cfg.channels, cfg.hidden, cfg.attn_kernel
        kw = dict(precision=precision)
        self.align_b = self.child("align_b", Conv2d(cfg.backbone_channels, cfg.channels, 1, **kw))
        self.align_n = self.child("align_n", Conv2d(cfg.neck_channels, cfg.channels, 1, **kw))
        self.local_dw = self.child("local_dw", Conv2d(c2, c2, 3, g=c2, **kw))
        self.local_pw = self.child("local_pw", Conv2d(c2, c2, 1, **kw))
        self.global_fc1 = self.child("global_fc1", Conv2d(c2, hid, 1, **kw))
        self.global_fc2 = self.child("global_fc2", Conv2d(hid, c2, 1, **kw))
        self.weight_fc1 = self.child("weight_fc1", Conv2d(c2, hid, 1, **kw))
        self.weight_fc2 = self.child("weight_fc2", Conv2d(hid, 2, 1, **kw))
        self.ca_fc1 = self.child("ca_fc1", Conv2d(c2, hid, 1, **kw))
        self.ca_fc2 = self.child("ca_fc2", Conv2d(hid, c2, 1, **kw))
        self.sa_conv = self.child("sa_conv", Conv2d(2, 1, k, p=k // 2, **kw))

    def forward(self, backbone: Tensor, neck: Tensor, return_parts: bool = False):
        """Return ``(enhanced_backbone, enhanced_neck)``.

        With ``return_parts=True`` a third element maps intermediate names
        (``x_concat``, ``f_local``, ``f_global``, ``logits``, ``w_local``,
        ``w_global``, ``f_fused``, ``calibrated``) to tensors.
        """
        if backbone.ndim != 4 or neck.ndim != 4:
            raise ValueError("DCFEM inputs must be rank 4")
        if backbone.shape[0] != neck.shape[0] or backbone.shape[2:] != neck.shape[2:]:
            raise ValueError(f"DCFEM spatial mismatch: {backbone.shape} vs {neck.shape}")
        if backbone.shape[1] != self.cfg.backbone_channels or neck.shape[1] != self.cfg.neck_channels:
            raise ValueError(
                f"DCFEM configured for {self.cfg.backbone_channels}+{self.cfg.neck_channels} channels, "
                f"got {backbone.shape[1]}+{neck.shape[1]}"
            )
        c = self.cfg.channels
        a_b = self.align_b(backbone)
        a_n = self.align_n(neck)
        x = ops.concat([a_b, a_n], axis=1)

        f_local = self.local_pw(self.local_dw(x))
        f_global = self.global_fc2(ops.gelu(self.global_fc1(ops.global_avg_pool(x))))
        logits = self.weight_fc2(ops.gelu(self.weight_fc1(x)))
        w = ops.softmax(logits, axis=1)
        w_local, w_global = ops.split(w, [1, 1], axis=1)
        fused = ops.add(ops.mul(w_local, f_local), ops.mul(w_global, f_global))

        ca = ops.sigmoid(self.ca_fc2(ops.silu(self.ca_fc1(ops.global_avg_pool(fused)))))
        y = ops.mul(fused, ca)
        pooled = ops.concat([ops.mean_axis(y, 1), ops.max_axis(y, 1)], axis=1)
        sa = ops.sigmoid(self.sa_conv(pooled))
        y = ops.mul(y, sa)
        calibrated = ops.add(y, fused)

        g_b, g_n = ops.split(calibrated, [c, c], axis=1)
        out = (ops.add(a_b, g_b), ops.add(a_n, g_n))
        if not return_parts:
            return out
        parts = dict(x_concat=x, f_local=f_local, f_global=f_global, logits=logits, w_local=w_local,
                     w_global=w_global, f_fused=fused, calibrated=calibrated)
        return out[0], out[1], parts
