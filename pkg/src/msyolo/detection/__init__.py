from .boxes import Box, DetBox, GtBox, confidence_order, iou, nms
from .io import (
    LabelFormatError,
    MissingManifestEntry,
    load_label_file,
    load_labels,
    load_manifest,
    load_prediction_file,
    load_predictions,
)
from .matching import MatchResult, match_detections
from .metrics import IOU_SWEEP, EvalReport, MatchRow, average_precision, evaluate, pr_counts_to_metrics

__all__ = [
    "Box",
    "DetBox",
    "EvalReport",
    "GtBox",
    "IOU_SWEEP",
    "LabelFormatError",
    "MatchResult",
    "MatchRow",
    "MissingManifestEntry",
    "average_precision",
    "confidence_order",
    "evaluate",
    "iou",
    "load_label_file",
    "load_labels",
    "load_manifest",
    "load_prediction_file",
    "load_predictions",
    "match_detections",
    "nms",
    "pr_counts_to_metrics",
]
