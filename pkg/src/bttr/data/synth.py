"""Synthetic handwritten-style expressions.

A small expression grammar produces token sequences; a stroke font and a
box layout turn them into strokes, which are then rasterised like InkML ink.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .batch import Sample
from .inkml import StrokeSet
from .raster import rasterize
from .vocab import Vocab, load_default_vocab

ATOMS = list("0123456789abcnxy")
OPS = ["+", "-", "="]


def _ellipse(cx, cy, rx, ry, a0=0.0, a1=360.0, n=16):
    t = np.radians(np.linspace(a0, a1, n))
    return list(zip(cx + rx * np.cos(t), cy + ry * np.sin(t)))


# glyph outlines in a box whose baseline is y = 1 and cap height y = 0 (y grows downward)
GLYPHS: dict[str, tuple[float, list]] = {
    "0": (0.6, [_ellipse(0.3, 0.5, 0.27, 0.5)]),
    "1": (0.4, [[(0.08, 0.2), (0.3, 0.0), (0.3, 1.0)]]),
    "2": (0.6, [[(0.05, 0.25), (0.15, 0.05), (0.3, 0.0), (0.45, 0.05), (0.55, 0.25),
                 (0.5, 0.45), (0.05, 1.0), (0.6, 1.0)]]),
    "3": (0.6, [[(0.05, 0.1), (0.3, 0.0), (0.5, 0.1), (0.5, 0.35), (0.25, 0.5),
                 (0.5, 0.6), (0.55, 0.85), (0.3, 1.0), (0.05, 0.9)]]),
    "4": (0.6, [[(0.45, 1.0), (0.45, 0.0), (0.0, 0.7), (0.6, 0.7)]]),
    "5": (0.6, [[(0.55, 0.0), (0.1, 0.0), (0.05, 0.45), (0.35, 0.4), (0.55, 0.6),
                 (0.5, 0.9), (0.3, 1.0), (0.05, 0.9)]]),
    "6": (0.6, [[(0.5, 0.05), (0.3, 0.0), (0.1, 0.2), (0.05, 0.6), (0.15, 0.95), (0.35, 1.0),
                 (0.55, 0.85), (0.5, 0.6), (0.3, 0.5), (0.1, 0.6)]]),
    "7": (0.6, [[(0.0, 0.0), (0.6, 0.0), (0.2, 1.0)]]),
    "8": (0.6, [_ellipse(0.3, 0.25, 0.2, 0.25), _ellipse(0.3, 0.72, 0.26, 0.28)]),
    "9": (0.6, [[(0.5, 0.4), (0.3, 0.5), (0.1, 0.35), (0.15, 0.08), (0.35, 0.0), (0.52, 0.15),
                 (0.5, 0.6), (0.35, 1.0), (0.1, 0.95)]]),
    "a": (0.6, [_ellipse(0.27, 0.7, 0.22, 0.3), [(0.52, 0.4), (0.52, 1.0)]]),
    "b": (0.6, [[(0.08, 0.0), (0.08, 1.0)], _ellipse(0.3, 0.7, 0.22, 0.3)]),
    "c": (0.55, [_ellipse(0.3, 0.7, 0.25, 0.3, 40, 320)]),
    "n": (0.6, [[(0.08, 0.4), (0.08, 1.0)],
                [(0.08, 0.6), (0.25, 0.4), (0.45, 0.45), (0.5, 0.6), (0.5, 1.0)]]),
    "x": (0.6, [[(0.05, 0.4), (0.5, 1.0)], [(0.5, 0.4), (0.05, 1.0)]]),
    "y": (0.6, [[(0.05, 0.4), (0.3, 0.85)], [(0.55, 0.4), (0.2, 1.3)]]),
    "+": (0.6, [[(0.05, 0.55), (0.55, 0.55)], [(0.3, 0.3), (0.3, 0.8)]]),
    "-": (0.6, [[(0.05, 0.55), (0.55, 0.55)]]),
    "=": (0.6, [[(0.05, 0.45), (0.55, 0.45)], [(0.05, 0.7), (0.55, 0.7)]]),
}


@dataclass
class Box:
    """Laid-out strokes; baseline at y = 0, ink spans y in [-ascent, descent]."""
    strokes: list
    width: float
    ascent: float
    descent: float

    def moved(self, dx: float, dy: float, s: float = 1.0) -> list:
        return [p * s + np.array([dx, dy]) for p in self.strokes]


def _glyph_box(tok: str, rng: Optional[np.random.Generator], jitter: float) -> Box:
    width, lines = GLYPHS[tok]
    strokes = []
    if rng is not None and jitter > 0:
        sx, sy = 1 + rng.uniform(-jitter, jitter, 2) * 2
        shift = rng.uniform(-jitter, jitter, 2)
    else:
        sx = sy = 1.0
        shift = np.zeros(2)
    for line in lines:
        p = np.asarray(line, dtype=np.float64)
        p = p * np.array([sx, sy]) + shift
        if rng is not None and jitter > 0:
            p = p + rng.normal(0, jitter / 3, p.shape)
        p[:, 1] -= 1.0
        strokes.append(p)
    ys = np.concatenate(strokes)[:, 1]
    return Box(strokes, width + 0.2, max(-ys.min(), 0.0), max(ys.max(), 0.0))


def _row(boxes: list[Box]) -> Box:
    strokes, x = [], 0.0
    for b in boxes:
        strokes += b.moved(x, 0.0)
        x += b.width
    return Box(strokes, x, max((b.ascent for b in boxes), default=0.0),
               max((b.descent for b in boxes), default=0.0))


class _Layout:
    def __init__(self, tokens: list[str], rng, jitter):
        self.toks, self.i, self.rng, self.jitter = tokens, 0, rng, jitter

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, expect=None):
        tok = self.peek()
        if tok is None or (expect is not None and tok != expect):
            raise ValueError(f"layout: expected {expect!r} at {self.i}, got {tok!r}")
        self.i += 1
        return tok

    def group(self) -> Box:
        self.take("{")
        box = self.row()
        self.take("}")
        return box

    def row(self) -> Box:
        items = []
        while self.peek() not in (None, "}"):
            items.append(self.item())
        return _row(items)

    def item(self) -> Box:
        tok = self.take()
        if tok == "\\frac":
            num, den = self.group(), self.group()
            s = 0.8
            w = max(num.width, den.width) * s + 0.3
            bar_y = -0.5
            strokes = [np.array([[0.05, bar_y], [w - 0.05, bar_y]])]
            strokes += num.moved((w - num.width * s) / 2, bar_y - 0.25 - num.descent * s, s)
            strokes += den.moved((w - den.width * s) / 2, bar_y + 0.25 + den.ascent * s, s)
            return Box(strokes, w + 0.15, -bar_y + 0.25 + (num.ascent + num.descent) * s,
                       max(bar_y + 0.25 + (den.ascent + den.descent) * s, 0.0))
        base = _glyph_box(tok, self.rng, self.jitter)
        if self.peek() in ("^", "_"):
            kind = self.take()
            script = self.group()
            s = 0.6
            dy = -0.55 if kind == "^" else 0.3
            strokes = base.strokes + script.moved(base.width - 0.1, dy, s)
            ascent = max(base.ascent, -dy + script.ascent * s)
            descent = max(base.descent, dy + script.descent * s)
            return Box(strokes, base.width - 0.1 + script.width * s + 0.1, ascent, descent)
        return base


def layout(tokens: list[str], rng: Optional[np.random.Generator] = None, jitter: float = 0.0) -> StrokeSet:
    """Strokes for a synthetic-grammar token sequence."""
    lay = _Layout(list(tokens), rng, jitter)
    box = lay.row()
    if lay.peek() is not None:
        raise ValueError(f"layout: unbalanced token sequence {tokens}")
    return StrokeSet(box.strokes)


# ---------------------------------------------------------------------------
# grammar
# ---------------------------------------------------------------------------

_FORMS = (("atom", 1, 1.0), ("binop", 3, 3.0), ("sup", 5, 2.0), ("sub", 5, 2.0), ("frac", 7, 2.0))


def generate_expression(rng: np.random.Generator, depth: int, budget: Optional[int] = None) -> list[str]:
    """Random token sequence of nesting depth <= ``depth`` and length <= ``budget``.

    The default budget is ``4 * depth + 3``.  Braces are balanced by
    construction; depth 0 yields a single atom.
    """
    budget = 4 * depth + 3 if budget is None else budget
    atom = lambda: ATOMS[rng.integers(len(ATOMS))]
    if depth <= 0 or budget < 3:
        return [atom()]
    forms = [(name, w) for name, need, w in _FORMS if need <= budget]
    weights = np.array([w for _, w in forms])
    name = forms[rng.choice(len(forms), p=weights / weights.sum())][0]
    if name == "atom":
        return [atom()]
    if name == "binop":
        inner = generate_expression(rng, depth - 1, budget - 2)
        op = OPS[rng.integers(len(OPS))]
        return inner + [op, atom()] if rng.random() < 0.5 else [atom(), op] + inner
    if name in ("sup", "sub"):
        inner = generate_expression(rng, depth - 1, budget - 4)
        return [atom(), "^" if name == "sup" else "_", "{"] + inner + ["}"]
    num = generate_expression(rng, depth - 1, budget - 6)
    den = generate_expression(rng, depth - 1, budget - 5 - len(num))
    return ["\\frac", "{"] + num + ["}", "{"] + den + ["}"]


def synth_generate(rng: np.random.Generator, n: int, grammar_depth: int, vocab: Optional[Vocab] = None,
                   target_height: int = 32, pen_width: float = 1.5, margin: int = 2,
                   max_width: int = 512, jitter: float = 0.04) -> list[Sample]:
    """``n`` rendered samples from the synthetic grammar."""
    vocab = vocab or load_default_vocab("synth")
    missing = [t for t in ATOMS + OPS + ["^", "_", "{", "}", "\\frac"] if t not in vocab]
    if missing:
        raise ValueError(f"vocab lacks synthetic-grammar symbols: {missing}")
    out = []
    for i in range(n):
        toks = generate_expression(rng, grammar_depth)
        strokes = layout(toks, rng, jitter)
        img = rasterize(strokes, target_height, pen_width, margin, max_width)
        out.append(Sample(img, [vocab.stoi[t] for t in toks], name=f"synth_{i:05d}"))
    return out
