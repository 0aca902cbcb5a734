"""Normalized center-format boxes, IoU and non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width and height must be positive, got w={self.w}, h={self.h}")

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2), not clipped."""
        hw, hh = self.w / 2, self.h / 2
        return self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class GtBox:
    class_id: int
    box: Box

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class id must be >= 0, got {self.class_id}")


@dataclass(frozen=True)
class DetBox:
    class_id: int
    confidence: float
    box: Box

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class id must be >= 0, got {self.class_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


def iou(a: Box, b: Box) -> float:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return min(inter / union, 1.0)


def confidence_order(dets: Sequence[DetBox]) -> list[int]:
    """Indices by descending confidence, ties by ascending index."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))


def nms(dets: Sequence[DetBox], iou_threshold: float = 0.5) -> list[DetBox]:
    """Greedy per-class suppression; a box is dropped when its IoU with a kept
    box of the same class exceeds the threshold. Output is in confidence order."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"IoU threshold must be in [0, 1], got {iou_threshold}")
    kept: list[DetBox] = []
    for i in confidence_order(dets):
        d = dets[i]
        if all(k.class_id != d.class_id or iou(k.box, d.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept
