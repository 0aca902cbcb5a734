"""Greedy confidence-ordered matching of detections to ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .boxes import DetBox, GtBox, confidence_order, iou


@dataclass(frozen=True)
class MatchResult:
    """``flags[i]`` is True when detection ``i`` (input order) is a true positive;
    ``matched_gt[i]`` is the index of its ground-truth box or None."""

    flags: tuple[bool, ...]
    matched_gt: tuple[int | None, ...]
    false_negatives: int

    @property
    def true_positives(self) -> int:
        return sum(self.flags)

    @property
    def false_positives(self) -> int:
        return len(self.flags) - self.true_positives


def match_detections(dets: Sequence[DetBox], gts: Sequence[GtBox], iou_threshold: float = 0.5) -> MatchResult:
    """Visit detections by descending confidence (ties by index); each takes the
    unmatched same-class ground truth of highest IoU (ties by lower index) if
    that IoU reaches the threshold."""
    taken = [False] * len(gts)
    matched: list[int | None] = [None] * len(dets)
    for i in confidence_order(dets):
        d = dets[i]
        best, best_iou = None, -1.0
        for j, g in enumerate(gts):
            if taken[j] or g.class_id != d.class_id:
                continue
            v = iou(d.box, g.box)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
            matched[i] = best
    flags = tuple(m is not None for m in matched)
    return MatchResult(flags, tuple(matched), len(gts) - sum(flags))
