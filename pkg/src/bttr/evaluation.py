"""Token-level recognition metrics.

Edit distance over tokens stands in for structural label-graph scoring, so
rates here are a surrogate and not directly comparable with official
CROHME numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data.vocab import Vocab, tokenize
from .inference import read_tsv


class MissingIdsError(KeyError):
    def __init__(self, missing_pred: list[str], missing_truth: list[str]):
        self.missing_pred, self.missing_truth = missing_pred, missing_truth
        parts = []
        if missing_pred:
            parts.append(f"no prediction for: {', '.join(missing_pred)}")
        if missing_truth:
            parts.append(f"no truth for: {', '.join(missing_truth)}")
        super().__init__("; ".join(parts))

    def __str__(self) -> str:
        return self.args[0]


def token_edit_distance(pred: Sequence, truth: Sequence) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    a, b = list(pred), list(truth)
    if len(a) < len(b):
        a, b = b, a
    prev = np.arange(len(b) + 1)
    for i, x in enumerate(a, 1):
        cur = np.empty_like(prev)
        cur[0] = i
        sub = prev[:-1] + np.array([x != y for y in b], dtype=np.int64)
        cur[1:] = np.minimum(sub, prev[1:] + 1)
        # insertions run left to right, so resolve them with a running minimum
        cur = np.minimum.accumulate(cur - np.arange(len(b) + 1)) + np.arange(len(b) + 1)
        prev = cur
    return int(prev[-1])


@dataclass
class EvalResult:
    n_samples: int
    exprate: float
    le1_rate: float
    le2_rate: float
    mean_distance: float

    @classmethod
    def from_distances(cls, distances: Sequence[int]) -> "EvalResult":
        d = np.asarray(distances)
        if d.size == 0:
            return cls(0, 0.0, 0.0, 0.0, 0.0)
        return cls(int(d.size), float((d == 0).mean()), float((d <= 1).mean()),
                   float((d <= 2).mean()), float(d.mean()))

    def report(self) -> str:
        return (f"samples          {self.n_samples}\n"
                f"ExpRate          {100 * self.exprate:6.2f}%\n"
                f"<=1 error        {100 * self.le1_rate:6.2f}%\n"
                f"<=2 errors       {100 * self.le2_rate:6.2f}%\n"
                f"mean edit dist   {self.mean_distance:.4f}\n")

    def kv(self) -> str:
        return (f"n_samples={self.n_samples}\nexprate={self.exprate!r}\nle1={self.le1_rate!r}\n"
                f"le2={self.le2_rate!r}\nmean_distance={self.mean_distance!r}\n")


def evaluate_pairs(pred: dict, truth: dict) -> tuple[EvalResult, dict[str, int]]:
    """Score token sequences keyed by id; both sides must cover the same ids."""
    missing_pred = sorted(set(truth) - set(pred))
    missing_truth = sorted(set(pred) - set(truth))
    if missing_pred or missing_truth:
        raise MissingIdsError(missing_pred, missing_truth)
    dist = {k: token_edit_distance(pred[k], truth[k]) for k in truth}
    return EvalResult.from_distances(list(dist.values())), dist


def evaluate(pred_file, truth_file, vocab: Vocab) -> EvalResult:
    """Compare a prediction file with a truth index (``id<TAB>markup`` each).

    Truth ids may be image paths; they match predictions by their file stem
    when the full id is absent.
    """
    pred_raw = read_tsv(pred_file)
    truth_raw = read_tsv(truth_file)
    if set(truth_raw) != set(pred_raw):
        truth_raw = {Path(k).stem: v for k, v in truth_raw.items()}
    pred = {k: tokenize(v, vocab) for k, v in pred_raw.items()}
    truth = {k: tokenize(v, vocab) for k, v in truth_raw.items()}
    return evaluate_pairs(pred, truth)[0]
