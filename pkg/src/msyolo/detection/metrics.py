"""Precision, recall, average precision and corpus-level evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .boxes import DetBox, GtBox
from .matching import match_detections

IOU_SWEEP: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
AP_METHODS = ("101-point", "all-point")


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def pr_counts_to_metrics(tp: int, fp: int, fn: int) -> dict[str, float]:
    """Precision TP/(TP+FP) and recall TP/(TP+FN), with 0/0 taken as 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    return {"precision": _ratio(tp, tp + fp), "recall": _ratio(tp, tp + fn)}


def average_precision(flags: Sequence[bool], n_gt: int, method: str = "101-point") -> float | None:
    """Area under the precision envelope for detections ranked by confidence.

    ``flags`` marks each ranked detection as TP (True) or FP. The envelope at
    recall r is the best precision reached at any recall >= r. ``all-point``
    integrates it exactly; ``101-point`` averages it at r = 0, 0.01, ..., 1.
    Returns 0 when there is no ground truth but there are detections, and
    None (undefined) when there are neither.
    """
    if method not in AP_METHODS:
        raise ValueError(f"unknown AP method {method!r}; choose from {AP_METHODS}")
    if n_gt < 0:
        raise ValueError("n_gt must be >= 0")
    tps = []
    tp = 0
    for f in flags:
        tp += bool(f)
        tps.append(tp)
    if tp > n_gt:
        raise ValueError(f"{tp} true positives exceed {n_gt} ground-truth boxes")
    if n_gt == 0:
        return 0.0 if tps else None
    if not tps:
        return 0.0
    env = [t / (k + 1) for k, t in enumerate(tps)]
    for k in range(len(env) - 2, -1, -1):
        env[k] = max(env[k], env[k + 1])
    if method == "all-point":
        total, prev = 0.0, 0
        for t, e in zip(tps, env):
            if t > prev:
                total += (t - prev) / n_gt * e
                prev = t
        return total
    # 101-point: integer comparison t/n_gt >= i/100 avoids rounding at the grid
    total, k = 0.0, 0
    for i in range(101):
        while k < len(tps) and tps[k] * 100 < i * n_gt:
            k += 1
        if k == len(tps):
            break
        total += env[k]
    return total / 101


@dataclass(frozen=True)
class MatchRow:
    image: str
    detection: int
    class_id: int
    confidence: float
    tp: bool
    gt: int | None


@dataclass
class EvalReport:
    classes: tuple[int, ...]
    thresholds: tuple[float, ...]
    ap: dict[tuple[int, float], float | None]
    n_gt: dict[int, int]
    n_det: dict[int, int]
    precision: float
    recall: float
    conf_threshold: float
    method: str
    matches: list[MatchRow] = field(default_factory=list)

    def map_at(self, threshold: float) -> float:
        """Unweighted mean AP over classes with a defined AP (0 if none)."""
        vals = [self.ap[c, threshold] for c in self.classes if self.ap[c, threshold] is not None]
        return sum(vals) / len(vals) if vals else 0.0

    @property
    def map50(self) -> float | None:
        return self.map_at(0.5) if 0.5 in self.thresholds else None

    @property
    def map50_95(self) -> float | None:
        if not all(t in self.thresholds for t in IOU_SWEEP):
            return None
        return sum(self.map_at(t) for t in IOU_SWEEP) / len(IOU_SWEEP)

    def tsv(self) -> str:
        """``metric<TAB>class<TAB>threshold<TAB>value`` lines."""
        lines = []
        for c in self.classes:
            for t in self.thresholds:
                v = self.ap[c, t]
                lines.append(f"AP\t{c}\t{t:.2f}\t{'nan' if v is None else repr(v)}")
        for t in self.thresholds:
            lines.append(f"mAP\tall\t{t:.2f}\t{self.map_at(t)!r}")
        if self.map50_95 is not None:
            lines.append(f"mAP\tall\t0.50:0.95\t{self.map50_95!r}")
        lines.append(f"precision\tall\t0.50\t{self.precision!r}")
        lines.append(f"recall\tall\t0.50\t{self.recall!r}")
        return "\n".join(lines) + "\n"

    def text(self) -> str:
        has_sweep = self.map50_95 is not None
        head = f"{'class':>6} {'gt':>6} {'det':>6} {'AP@0.5':>9}" + (f" {'AP@.5:.95':>10}" if has_sweep else "")
        lines = [f"AP method: {self.method}", head]

        def fmt(v):
            return "-" if v is None else f"{v:.4f}"

        for c in self.classes:
            row = f"{c:>6} {self.n_gt[c]:>6} {self.n_det[c]:>6} {fmt(self.ap.get((c, 0.5))):>9}"
            if has_sweep:
                vals = [self.ap[c, t] for t in IOU_SWEEP]
                row += f" {fmt(None if vals[0] is None else sum(vals) / len(vals)):>10}"
            lines.append(row)
        if self.map50 is not None:
            lines.append(f"mAP@0.5      {self.map50:.4f}")
        if has_sweep:
            lines.append(f"mAP@0.5:0.95 {self.map50_95:.4f}")
        lines.append(f"precision    {self.precision:.4f}  (conf >= {self.conf_threshold}, IoU 0.5)")
        lines.append(f"recall       {self.recall:.4f}")
        return "\n".join(lines) + "\n"


def evaluate(
    dets: Sequence[Sequence[DetBox]],
    gts: Sequence[Sequence[GtBox]],
    iou_thresholds: Sequence[float] = IOU_SWEEP,
    method: str = "101-point",
    conf_threshold: float = 0.25,
    image_ids: Sequence[str] | None = None,
) -> EvalReport:
    """Pool matches per class across images and compute AP per class and threshold.

    The class universe is every class seen in ground truth or predictions.
    Pooled detections are ranked by confidence, then image index, then
    detection index. Precision and recall are taken over all classes at IoU
    0.5 for detections with confidence >= ``conf_threshold``.
    """
    if len(dets) != len(gts):
        raise ValueError(f"{len(dets)} prediction lists for {len(gts)} images")
    if method not in AP_METHODS:
        raise ValueError(f"unknown AP method {method!r}; choose from {AP_METHODS}")
    thresholds = tuple(sorted({round(float(t), 10) for t in iou_thresholds}))
    if not thresholds or not all(0.0 <= t <= 1.0 for t in thresholds):
        raise ValueError("IoU thresholds must be a non-empty set in [0, 1]")
    ids = [str(i) for i in range(len(gts))] if image_ids is None else [str(i) for i in image_ids]

    classes = sorted({g.class_id for img in gts for g in img} | {d.class_id for img in dets for d in img})
    n_gt = {c: sum(g.class_id == c for img in gts for g in img) for c in classes}
    n_det = {c: sum(d.class_id == c for img in dets for d in img) for c in classes}

    ap: dict[tuple[int, float], float | None] = {}
    rows: list[MatchRow] = []
    tp_op = fp_op = 0
    for t in thresholds:
        pooled: dict[int, list[tuple[float, int, int, bool]]] = {c: [] for c in classes}
        for i, (di, gi) in enumerate(zip(dets, gts)):
            m = match_detections(di, gi, t)
            for j, d in enumerate(di):
                pooled[d.class_id].append((-d.confidence, i, j, m.flags[j]))
            if t == 0.5:
                for j, d in enumerate(di):
                    rows.append(MatchRow(ids[i], j, d.class_id, d.confidence, m.flags[j], m.matched_gt[j]))
        for c in classes:
            entries = sorted(pooled[c])
            ap[c, t] = average_precision([e[3] for e in entries], n_gt[c], method)

    # operating point at IoU 0.5
    total_gt = sum(n_gt.values())
    for di, gi in zip(dets, gts):
        m = match_detections(di, gi, 0.5)
        for d, f in zip(di, m.flags):
            if d.confidence >= conf_threshold:
                tp_op += f
                fp_op += not f
    pr = pr_counts_to_metrics(tp_op, fp_op, total_gt - tp_op)
    return EvalReport(tuple(classes), thresholds, ap, n_gt, n_det, pr["precision"], pr["recall"],
                      conf_threshold, method, rows)
