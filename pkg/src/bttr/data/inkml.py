"""InkML stroke files."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class InkMLError(ValueError):
    """Malformed InkML; ``offset`` is the byte offset of the failure when known."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")


@dataclass
class StrokeSet:
    strokes: list[np.ndarray]
    truth: Optional[str] = None
    missing_truth: bool = False
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.strokes)

    def bounds(self) -> tuple[float, float, float, float]:
        pts = np.concatenate(self.strokes, axis=0)
        return float(pts[:, 0].min()), float(pts[:, 1].min()), float(pts[:, 0].max()), float(pts[:, 1].max())

    def transformed(self, scale: float = 1.0, dx: float = 0.0, dy: float = 0.0) -> "StrokeSet":
        return StrokeSet([s * scale + np.array([dx, dy]) for s in self.strokes], self.truth,
                         self.missing_truth, list(self.ids))


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _byte_offset(data: bytes, line: int, col: int) -> int:
    lines = data.split(b"\n")
    return sum(len(l) + 1 for l in lines[: line - 1]) + col


def parse_trace(text: str) -> np.ndarray:
    """``"x y [t], x y [t], ..."`` -> [n, 2] array of (x, y)."""
    pts = []
    for chunk in text.split(","):
        vals = chunk.split()
        if not vals:
            continue
        if len(vals) < 2:
            raise InkMLError(f"trace point {chunk.strip()!r} has fewer than two coordinates")
        pts.append((float(vals[0]), float(vals[1])))
    if not pts:
        raise InkMLError("empty trace")
    arr = np.asarray(pts, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise InkMLError("non-finite trace coordinate")
    return arr


def parse_inkml(data: bytes | str) -> tuple[StrokeSet, Optional[str]]:
    """Extract traces in document order and the LaTeX truth annotation.

    The truth string is returned verbatim (``None`` when absent, in which case
    ``StrokeSet.missing_truth`` is set).
    """
    raw = data.encode("utf-8") if isinstance(data, str) else data
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        line, col = exc.position
        raise InkMLError(f"malformed InkML: {exc}", _byte_offset(raw, line, col)) from None
    strokes, ids = [], []
    truth = None
    for el in root.iter():
        tag = _local(el.tag)
        if tag == "trace":
            strokes.append(parse_trace(el.text or ""))
            ids.append(el.get("id", str(len(ids))))
        elif tag == "annotation" and el.get("type") == "truth" and truth is None:
            # only the document-level truth, not per-traceGroup labels
            if _is_top_level(root, el):
                truth = el.text or ""
    ss = StrokeSet(strokes, truth, truth is None, ids)
    return ss, truth


def _is_top_level(root, el) -> bool:
    return any(child is el for child in root)


def read_inkml(path) -> tuple[StrokeSet, Optional[str]]:
    with open(path, "rb") as fh:
        return parse_inkml(fh.read())


def strip_math(truth: str) -> str:
    """Drop surrounding ``$`` delimiters that CROHME truth strings carry."""
    t = truth.strip()
    if len(t) >= 2 and t[0] == "$" and t[-1] == "$":
        t = t[1:-1].strip()
    return t
