"""Stroke rasterisation and bitmap I/O."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .inkml import StrokeSet

TARGET_HEIGHT = 128
PEN_WIDTH = 2.0
MARGIN = 4
MAX_WIDTH = 1600


def _polyline_coverage(pts: np.ndarray, radius: float, shape: tuple[int, int]) -> tuple[np.ndarray, tuple]:
    """Anti-aliased ink coverage of one polyline inside its bounding window."""
    h, w = shape
    pad = radius + 1.5
    x0 = max(int(np.floor(pts[:, 0].min() - pad)), 0)
    x1 = min(int(np.ceil(pts[:, 0].max() + pad)) + 1, w)
    y0 = max(int(np.floor(pts[:, 1].min() - pad)), 0)
    y1 = min(int(np.ceil(pts[:, 1].max() + pad)) + 1, h)
    if x1 <= x0 or y1 <= y0:
        return np.zeros((0, 0)), (0, 0)
    cx = np.arange(x0, x1) + 0.5
    cy = np.arange(y0, y1) + 0.5
    px, py = np.meshgrid(cx, cy)                       # [hh, ww]
    if len(pts) == 1:
        dist = np.hypot(px - pts[0, 0], py - pts[0, 1])
    else:
        a = pts[:-1]
        d = pts[1:] - a
        len2 = (d ** 2).sum(axis=1)
        len2 = np.where(len2 > 0, len2, 1.0)
        rx = px[None] - a[:, 0, None, None]
        ry = py[None] - a[:, 1, None, None]
        t = np.clip((rx * d[:, 0, None, None] + ry * d[:, 1, None, None]) / len2[:, None, None], 0, 1)
        dx = rx - t * d[:, 0, None, None]
        dy = ry - t * d[:, 1, None, None]
        dist = np.sqrt(dx * dx + dy * dy).min(axis=0)
    cover = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    return cover, (y0, x0)


def rasterize(strokes: StrokeSet | Sequence[np.ndarray], target_height: int = TARGET_HEIGHT,
              pen_width: float = PEN_WIDTH, margin: int = MARGIN, max_width: int = MAX_WIDTH) -> np.ndarray:
    """Render strokes to a float32 bitmap with background 0 and ink 1.

    The ink bounding box is scaled isotropically to ``target_height`` rows (or,
    for a flat box, to that many columns), the width is clamped to
    ``max_width`` and a ``margin`` of background surrounds the ink.
    """
    lines = list(strokes.strokes if isinstance(strokes, StrokeSet) else strokes)
    if not lines:
        raise ValueError("rasterize needs at least one stroke")
    lines = [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in lines]
    pts = np.concatenate(lines, axis=0)
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    bw, bh = float(span[0]), float(span[1])
    radius = pen_width / 2.0
    height = target_height + 2 * margin
    if bh <= 0 and bw <= 0:
        img = np.zeros((height, height), dtype=np.float32)
        c = height / 2.0
        cover, (y0, x0) = _polyline_coverage(np.array([[c, c]]), radius, img.shape)
        img[y0:y0 + cover.shape[0], x0:x0 + cover.shape[1]] = cover
        return img
    scale = target_height / bh if bh > 0 else target_height / bw
    if bw * scale > max_width - 2 * margin:
        scale = (max_width - 2 * margin) / bw
    width = int(round(bw * scale)) + 2 * margin
    width = max(width, 2 * margin + 1)
    yoff = margin + (target_height - bh * scale) / 2.0
    img = np.zeros((height, width), dtype=np.float32)
    for s in lines:
        p = np.empty_like(s)
        p[:, 0] = (s[:, 0] - lo[0]) * scale + margin
        p[:, 1] = (s[:, 1] - lo[1]) * scale + yoff
        cover, (y0, x0) = _polyline_coverage(p, radius, img.shape)
        if cover.size:
            win = img[y0:y0 + cover.shape[0], x0:x0 + cover.shape[1]]
            np.maximum(win, cover, out=win)
    return img


def save_image(path, img: np.ndarray) -> None:
    """Write a [0, 1] bitmap as 8-bit PNG or PGM (chosen by suffix)."""
    from PIL import Image
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path))


def load_image(path) -> np.ndarray:
    from PIL import Image
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0
