"""Label, prediction and manifest files.

Ground truth: one ``<image id>.txt`` per image, lines ``class cx cy w h``.
Predictions: one ``<image id>.txt`` per image, lines ``class conf cx cy w h``.
Coordinates are normalized: centers in [0, 1], sizes in (0, 1]. Blank lines
and ``#`` comments are skipped. A manifest lists image ids, one per line.
"""

from __future__ import annotations

import os
from pathlib import Path

from .boxes import Box, DetBox, GtBox


class LabelFormatError(ValueError):
    def __init__(self, path: str | os.PathLike, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class MissingManifestEntry(LookupError):
    pass


def _rows(path: Path, width: int):
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != width:
            raise LabelFormatError(path, lineno, f"expected {width} fields, got {len(fields)}")
        try:
            cls = int(fields[0])
        except ValueError:
            raise LabelFormatError(path, lineno, f"class id {fields[0]!r} is not an integer") from None
        if cls < 0:
            raise LabelFormatError(path, lineno, f"negative class id {cls}")
        try:
            values = [float(f) for f in fields[1:]]
        except ValueError:
            raise LabelFormatError(path, lineno, "non-numeric field") from None
        yield lineno, cls, values


def _box(path: Path, lineno: int, cx: float, cy: float, w: float, h: float) -> Box:
    if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
        raise LabelFormatError(path, lineno, f"center ({cx}, {cy}) outside [0, 1]")
    if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
        raise LabelFormatError(path, lineno, f"size ({w}, {h}) outside (0, 1]")
    return Box(cx, cy, w, h)


def load_label_file(path: str | os.PathLike) -> list[GtBox]:
    path = Path(path)
    return [GtBox(cls, _box(path, n, *v)) for n, cls, v in _rows(path, 5)]


def load_prediction_file(path: str | os.PathLike) -> list[DetBox]:
    path = Path(path)
    out = []
    for n, cls, v in _rows(path, 6):
        conf = v[0]
        if not 0.0 <= conf <= 1.0:
            raise LabelFormatError(path, n, f"confidence {conf} outside [0, 1]")
        out.append(DetBox(cls, conf, _box(path, n, *v[1:])))
    return out


def load_manifest(path: str | os.PathLike) -> list[str]:
    path = Path(path)
    ids, seen = [], set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if len(line.split()) != 1:
            raise LabelFormatError(path, lineno, "expected one image id per line")
        if line in seen:
            raise LabelFormatError(path, lineno, f"duplicate image id {line!r}")
        seen.add(line)
        ids.append(line)
    return ids


def load_labels(directory: str | os.PathLike, image_ids: list[str] | None = None) -> dict[str, list[GtBox]]:
    """Ground truth for each image id, in id order. Without ids, every ``.txt``
    file in the directory is loaded in sorted name order."""
    root = Path(directory)
    if image_ids is None:
        image_ids = sorted(p.stem for p in root.glob("*.txt"))
    out = {}
    for i in image_ids:
        p = root / f"{i}.txt"
        if not p.is_file():
            raise MissingManifestEntry(f"no ground-truth file for image {i!r} in {str(root)!r}")
        out[i] = load_label_file(p)
    return out


def load_predictions(directory: str | os.PathLike, image_ids: list[str]) -> dict[str, list[DetBox]]:
    """Predictions for each image id; a missing file means no detections."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"prediction directory {str(root)!r} does not exist")
    out = {}
    for i in image_ids:
        p = root / f"{i}.txt"
        out[i] = load_prediction_file(p) if p.is_file() else []
    return out
