"""Directional beam search, cross-direction rescoring and ensembles.

Scores follow one convention throughout: a finished hypothesis with core
length ``n`` (start and stop symbols excluded) and accumulated log
probability ``logp`` (stop step included) ranks by ``logp / n**alpha``.
Ties break on shorter core, then lexicographically smaller ids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import SearchParams
from .data.vocab import EOS, PAD, SOS, Vocab, detokenize
from .encoder import Memory
from .numerics import Tensor, no_grad

log = logging.getLogger(__name__)

L2R, R2L = "L2R", "R2L"
START = {L2R: SOS, R2L: EOS}
STOP = {L2R: EOS, R2L: SOS}
OPPOSITE = {L2R: R2L, R2L: L2R}


class ConfigError(ValueError):
    """Models or search settings that cannot be combined."""


@dataclass
class Hypothesis:
    direction: str
    ids: tuple                 # start token + core, stop excluded
    logp: float
    finished: bool = False
    score: float = float("-inf")

    @property
    def core(self) -> tuple:
        return self.ids[1:]

    def l2r_core(self) -> tuple:
        """Core in reading order."""
        return self.core if self.direction == L2R else self.core[::-1]


@dataclass
class JointResult:
    ids: tuple                 # winning core, reading order
    score: float
    direction: str
    candidates: list = field(default_factory=list)   # (final score, Hypothesis), best first


def penalized(logp: float, length: int, alpha: float) -> float:
    return logp / float(length) ** alpha


def rank_key(score: float, core: Sequence[int]) -> tuple:
    return (-score, len(core), tuple(core))


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def _average_logprobs(per_model: list[np.ndarray]) -> np.ndarray:
    if len(per_model) == 1:
        return per_model[0]
    with np.errstate(divide="ignore"):
        return np.log(np.mean([np.exp(lp) for lp in per_model], axis=0))


class StepScorer:
    """Next-token log probabilities for one image, averaged over models.

    With several models the per-step softmax distributions are averaged and
    the log of the mean is used for scoring.
    """

    def __init__(self, models, memories):
        self.decoders = [getattr(m, "decoder", m) for m in _as_list(models)]
        self.memories = _as_list(memories)
        if len(self.decoders) != len(self.memories):
            raise ConfigError(f"{len(self.decoders)} models but {len(self.memories)} memories")
        sizes = {d.vocab_size for d in self.decoders}
        if len(sizes) != 1:
            raise ConfigError(f"ensemble members disagree on vocabulary size: {sorted(sizes)}")
        for m in self.memories:
            if m.batch != 1:
                raise ValueError("search works on one image at a time")
        self.vocab_size = sizes.pop()
        self.max_positions = min(d.max_positions for d in self.decoders)
        self.rows = 0

    def start(self) -> list:
        return [d.init_state(m) for d, m in zip(self.decoders, self.memories)]

    def step(self, states: list, ids: Sequence[int]) -> tuple[np.ndarray, list]:
        ids = np.asarray(ids, dtype=np.int64)
        self.rows += len(ids)
        per_model, new = [], []
        for dec, st in zip(self.decoders, states):
            logits, st = dec.step(st, ids)
            per_model.append(_log_softmax64(logits))
            new.append(st)
        return _average_logprobs(per_model), new

    @staticmethod
    def reorder(states: list, index) -> list:
        return [s.reorder(index) for s in states]

    def sequence_logprob(self, start: int, cores: Sequence[Sequence[int]], stop: int) -> np.ndarray:
        """Teacher-forced log P(core + stop | start) for each core."""
        if not cores:
            return np.zeros(0)
        n = len(cores)
        length = max(len(c) for c in cores) + 1
        inputs = np.full((n, length), PAD, dtype=np.int64)
        targets = np.full((n, length), PAD, dtype=np.int64)
        mask = np.zeros((n, length), dtype=bool)
        for i, c in enumerate(cores):
            inputs[i, : len(c) + 1] = [start, *c]
            targets[i, : len(c) + 1] = [*c, stop]
            mask[i, : len(c) + 1] = True
        per_model = []
        with no_grad():
            for dec, mem in zip(self.decoders, self.memories):
                tiled = Memory(Tensor(np.repeat(mem.features.data, n, axis=0)),
                               np.repeat(mem.key_mask, n, axis=0), mem.grid)
                per_model.append(_log_softmax64(dec.forward(tiled, inputs, mask).data))
        lp = _average_logprobs(per_model)
        picked = np.take_along_axis(lp, targets[..., None], axis=-1)[..., 0]
        return np.where(mask, picked, 0.0).sum(axis=1)


def _as_list(x) -> list:
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _scorer(models, memories) -> StepScorer:
    return models if isinstance(models, StepScorer) else StepScorer(models, memories)


def beam_search(models, memories, direction: str, params: SearchParams) -> list[Hypothesis]:
    """Up to ``k`` best finished hypotheses in one direction, best first.

    The stop symbol is only offered once the core holds a token and is the
    only option at ``max_len``.  Search ends early once the pool holds ``k``
    hypotheses that no live prefix can overtake: a live prefix's final score
    is at most ``logp / max_len**alpha`` because log probabilities only fall.
    """
    if direction not in START:
        raise ValueError(f"direction must be {L2R!r} or {R2L!r}, got {direction!r}")
    scorer = _scorer(models, memories)
    k, alpha = params.beam, params.alpha
    max_len = min(params.max_len, scorer.max_positions - 1)
    start, stop = START[direction], STOP[direction]
    content = np.arange(EOS + 1, scorer.vocab_size)
    if content.size == 0:
        raise ConfigError("vocabulary has no content tokens")

    live: list[tuple] = [(start,)]
    live_lp = np.zeros(1)
    states = scorer.start()
    pool: list[Hypothesis] = []
    for t in range(max_len + 1):
        logp, states = scorer.step(states, [h[-1] for h in live])
        if t >= 1:
            for i, h in enumerate(live):
                lp = float(live_lp[i] + logp[i, stop])
                pool.append(Hypothesis(direction, h, lp, True, penalized(lp, t, alpha)))
            pool.sort(key=lambda h: rank_key(h.score, h.core))
            del pool[k:]
        if t == max_len:
            break
        cand = live_lp[:, None] + logp[:, content]                 # [n_live, C]
        parent, tok = np.divmod(np.arange(cand.size), content.size)
        order = np.lexsort((tok, parent, -cand.ravel()))[:k]
        live = [live[parent[j]] + (int(content[tok[j]]),) for j in order]
        live_lp = cand.ravel()[order]
        states = scorer.reorder(states, parent[order])
        if len(pool) == k and pool[-1].score >= penalized(float(live_lp.max()), max_len, alpha):
            break
    return pool


def reverse_rescore(models, memories, hypotheses: Sequence[Hypothesis]) -> np.ndarray:
    """Log-likelihood of each reversed core under the opposite direction."""
    scorer = _scorer(models, memories)
    out = np.zeros(len(hypotheses))
    for d in (L2R, R2L):
        idx = [i for i, h in enumerate(hypotheses) if h.direction == d]
        if not idx:
            continue
        opp = OPPOSITE[d]
        cores = [tuple(reversed(hypotheses[i].core)) for i in idx]
        out[idx] = scorer.sequence_logprob(START[opp], cores, STOP[opp])
    return out


def joint_search(models, memories, params: SearchParams) -> JointResult:
    """Beam search both ways, rescore each hypothesis with the other way, take the best.

    Final score = penalized score + ``rescore_weight`` * reverse log-likelihood
    / n**alpha.  A positive weight rewards agreement between directions;
    zero reduces to the better of the two directional winners.
    """
    scorer = _scorer(models, memories)
    hyps = beam_search(scorer, None, L2R, params) + beam_search(scorer, None, R2L, params)
    w = params.rescore_weight
    rev = reverse_rescore(scorer, None, hyps) if w != 0 else np.zeros(len(hyps))
    scored = []
    for h, r in zip(hyps, rev):
        final = h.score + w * penalized(float(r), len(h.core), params.alpha)
        scored.append((final, h))
    scored.sort(key=lambda fh: rank_key(fh[0], fh[1].l2r_core()))
    best_score, best = scored[0]
    return JointResult(best.l2r_core(), best_score, best.direction, scored)


def ensemble_decode(models, memories, params: SearchParams) -> JointResult:
    """Joint search with per-step probabilities averaged over ``models``."""
    return joint_search(StepScorer(models, memories), None, params)


def search(models, memories, params: SearchParams, mode: str = "joint") -> tuple:
    """Best core (reading order) under ``mode``: ``joint``, ``l2r`` or ``r2l``."""
    if mode == "joint":
        return joint_search(models, memories, params).ids
    hyps = beam_search(models, memories, {"l2r": L2R, "r2l": R2L}[mode], params)
    return hyps[0].l2r_core()


def _encode_all(models, image: np.ndarray, mask=None) -> list[Memory]:
    with no_grad():
        return [m.encode(image, mask) for m in _as_list(models)]


def recognize_ids(image: np.ndarray, models, params: SearchParams, mode: str = "joint") -> tuple:
    for m in _as_list(models):
        m.eval()
    return search(_as_list(models), _encode_all(models, image), params, mode)


def recognize(image: np.ndarray, models, params: SearchParams, vocab: Vocab, mode: str = "joint") -> str:
    """Markup string for one [H, W] bitmap; several models form an ensemble."""
    return detokenize(recognize_ids(image, models, params, mode), vocab)


def decode_images(images: Iterable[np.ndarray], models, params: SearchParams, mode: str = "joint") -> list[tuple]:
    return [recognize_ids(img, models, params, mode) for img in images]


# ---------------------------------------------------------------------------
# prediction files
# ---------------------------------------------------------------------------

def write_predictions(path, rows: Iterable[tuple[str, str]]) -> None:
    """``image_id<TAB>markup`` lines, in the given order."""
    lines = []
    for image_id, markup in rows:
        if "\t" in image_id or "\n" in image_id:
            raise ValueError(f"image id {image_id!r} contains a tab or newline")
        lines.append(f"{image_id}\t{markup}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_tsv(path) -> dict[str, str]:
    """``key<TAB>value`` lines as an ordered dict; blank lines are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'id<TAB>text'")
        key, value = line.split("\t", 1)
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate id {key!r}")
        out[key] = value
    return out
