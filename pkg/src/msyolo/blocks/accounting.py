"""Closed-form parameter and FLOP counts.

Conventions: one multiply-accumulate is 2 FLOPs, a bias add 1 FLOP per
output element, batch norm 2 FLOPs per element, any activation (SiLU, GELU,
sigmoid, softmax) 4 FLOPs per element, elementwise add/mul 1 FLOP per output
element, pooling kernel*kernel FLOPs per output element, and mean/max
reductions 1 FLOP per input element. Concatenation, splitting, padding and
nearest upsampling are free.

Running batch-norm statistics are counted separately as ``buffers``.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..core.ops import FLOPS_ACT, FLOPS_BN, FLOPS_ELEMENTWISE, FLOPS_PER_MAC
from ..core.tensor import conv_out_extent
from .dcfem import DcfemConfig
from .dwr import DwrConfig, MsDrmConfig
from .lads import LadsConfig

Shape = tuple[int, int, int, int]


@dataclass(frozen=True)
class Counts:
    params: int = 0
    buffers: int = 0
    flops: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.params + other.params, self.buffers + other.buffers, self.flops + other.flops)


def conv_params(cin: int, cout: int, k: int, groups: int = 1, bias: bool = True) -> int:
    return cout * (cin // groups) * k * k + (cout if bias else 0)


def conv_flops(cin: int, cout: int, k: int, groups: int, n: int, hout: int, wout: int, bias: bool = True) -> int:
    macs = cout * (cin // groups) * k * k * n * hout * wout
    return FLOPS_PER_MAC * macs + (cout * n * hout * wout if bias else 0)


def conv_counts(cin, cout, k, groups, n, hout, wout, bias=True) -> Counts:
    return Counts(conv_params(cin, cout, k, groups, bias), 0, conv_flops(cin, cout, k, groups, n, hout, wout, bias))


def bn_counts(c: int, elements: int) -> Counts:
    return Counts(2 * c, 2 * c, FLOPS_BN * elements)


def act(elements: int) -> Counts:
    return Counts(flops=FLOPS_ACT * elements)


def elementwise(elements: int) -> Counts:
    return Counts(flops=FLOPS_ELEMENTWISE * elements)


def cbs_counts(cin: int, cout: int, k: int, s: int, p: int | None, g: int, d: int, use_act: bool,
               shape: Shape) -> tuple[Counts, Shape]:
    n, _, h, w = shape
    p = d * (k - 1) // 2 if p is None else p
    ho, wo = conv_out_extent(h, k, s, p, d), conv_out_extent(w, k, s, p, d)
    e = n * cout * ho * wo
    total = conv_counts(cin, cout, k, g, n, ho, wo, bias=False) + bn_counts(cout, e)
    if use_act:
        total += act(e)
    return total, (n, cout, ho, wo)


def dwr_counts(cfg: DwrConfig, shape: Shape) -> tuple[Counts, Shape]:
    n, c, h, w = shape
    e = n * c * h * w
    total, _ = cbs_counts(c, c, 3, 1, None, 1, 1, True, shape)
    for ci in cfg.branch_channels:
        total += conv_counts(ci, ci, 3, ci, n, h, w, bias=False)
    total += bn_counts(c, e) + conv_counts(c, c, 1, 1, n, h, w, bias=False) + elementwise(e)
    return total, shape


def msdrm_counts(cfg: MsDrmConfig, shape: Shape) -> tuple[Counts, Shape]:
    n, _, h, w = shape
    hid = cfg.hidden
    total, _ = cbs_counts(cfg.in_channels, 2 * hid, 1, 1, None, 1, 1, cfg.act, shape)
    unit, _ = dwr_counts(DwrConfig(hid, cfg.dilations), (n, hid, h, w))
    for _ in range(cfg.n):
        total += unit
    proj, out = cbs_counts(cfg.concat_channels, cfg.out_channels, 1, 1, None, 1, 1, cfg.act, (n, 0, h, w))
    return total + proj, out


def dcfem_counts(cfg: DcfemConfig, shape: Shape) -> tuple[Counts, tuple[Shape, Shape]]:
    """``shape`` is the shared (N, -, H, W) of the two inputs."""
    n, _, h, w = shape
    c, c2, hid, k = cfg.channels, 2 * cfg.channels, cfg.hidden, cfg.attn_kernel
    hw = n * h * w
    big = c2 * hw
    total = conv_counts(cfg.backbone_channels, c, 1, 1, n, h, w) + conv_counts(cfg.neck_channels, c, 1, 1, n, h, w)
    # local branch
    total += conv_counts(c2, c2, 3, c2, n, h, w) + conv_counts(c2, c2, 1, 1, n, h, w)
    # global branch on the pooled vector
    total += Counts(flops=big) + conv_counts(c2, hid, 1, 1, n, 1, 1) + act(n * hid) + conv_counts(hid, c2, 1, 1, n, 1, 1)
    # per-pixel weights
    total += conv_counts(c2, hid, 1, 1, n, h, w) + act(hid * hw) + conv_counts(hid, 2, 1, 1, n, h, w) + act(2 * hw)
    # blend: two products and a sum
    total += elementwise(3 * big)
    # channel attention
    total += Counts(flops=big) + conv_counts(c2, hid, 1, 1, n, 1, 1) + act(n * hid)
    total += conv_counts(hid, c2, 1, 1, n, 1, 1) + act(n * c2) + elementwise(big)
    # spatial attention: channel mean and max, kxk conv, sigmoid, product
    total += Counts(flops=2 * big) + conv_counts(2, 1, k, 1, n, h, w) + act(hw) + elementwise(big)
    # residual and the two cross-path sums
    total += elementwise(big) + elementwise(2 * c * hw)
    out = (n, c, h, w)
    return total, (out, out)


def lads_counts(cfg: LadsConfig, shape: Shape) -> tuple[Counts, Shape]:
    n, cin, h, w = shape
    if (h % 2 or w % 2) and cfg.pad_odd:
        h, w = h + h % 2, w + w % 2
    ho, wo = conv_out_extent(h, 3, 2, 1), conv_out_extent(w, 3, 2, 1)
    cout = cfg.out_channels
    hw = n * ho * wo
    total = Counts(flops=9 * cin * hw)  # 3x3 average pool
    total += conv_counts(cin, 4, 1, 1, n, ho, wo) + act(4 * hw)
    total += conv_counts(cin, 4 * cout, 3, cfg.groups, n, ho, wo)
    # four weighted products and three sums
    total += elementwise(4 * cout * hw) + elementwise(3 * cout * hw)
    return total, (n, cout, ho, wo)


def strided_conv_counts(cin: int, cout: int, shape: Shape) -> Counts:
    n, _, h, w = shape
    ho, wo = conv_out_extent(h, 3, 2, 1), conv_out_extent(w, 3, 2, 1)
    return conv_counts(cin, cout, 3, 1, n, ho, wo)


def lads_vs_strided_report(cfg: LadsConfig, height: int = 64, width: int = 64, batch: int = 1) -> dict[str, int]:
    """LADS against a plain 3x3 stride-2 convolution (with bias) mapping the
    same Cin -> Cout, on an input of the given size."""
    shape = (batch, cfg.in_channels, height, width)
    lads, _ = lads_counts(cfg, shape)
    base = strided_conv_counts(cfg.in_channels, cfg.out_channels, shape)
    return {
        "lads_params": lads.params,
        "lads_flops": lads.flops,
        "baseline_params": base.params,
        "baseline_flops": base.flops,
    }
