"""Bidirectional training: loss, Adadelta and the epoch loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import TrainConfig
from .data.batch import BiBatch, Sample, make_bibatch
from .model import Model, tile_memory
from .numerics import Tensor, make_rng, ops

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


def _masked_mean_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray, rows: int) -> tuple[Tensor, np.ndarray]:
    """Sum over rows of (mean CE over the row's valid positions) / rows."""
    ce = ops.cross_entropy(logits, targets)
    counts = mask.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ValueError("every row needs at least one non-PAD target")
    weights = (mask / counts / rows).astype(logits.dtype)
    row_means = (ce.data * mask).sum(axis=1) / counts[:, 0]
    return ops.sum(ops.mul(ce, weights)), row_means


def bidirectional_loss(logits_l2r: Tensor, logits_r2l: Tensor, batch: BiBatch) -> Tensor:
    """Mean over samples and both directions of the per-sample mean target NLL.

    With all lengths equal to L this is sum_z sum_j (l2r + r2l) / (2 Z L).
    ``loss.meta`` carries the per-direction components.
    """
    logits = ops.concat([logits_l2r, logits_r2l], axis=0)
    return concat_loss(logits, batch)


def concat_loss(logits: Tensor, batch: BiBatch, bidirectional: bool = True) -> Tensor:
    """Loss for logits over the concatenated [l2r; r2l] batch (or l2r only)."""
    if not batch.token_mask.any():
        raise ValueError("batch has no valid target positions")
    b = batch.size
    if bidirectional:
        loss, row = _masked_mean_loss(logits, batch.targets(), batch.masks(), 2 * b)
        loss.meta["l2r"] = float(row[:b].mean())
        loss.meta["r2l"] = float(row[b:].mean())
    else:
        loss, row = _masked_mean_loss(logits, batch.l2r_target, batch.token_mask, b)
        loss.meta["l2r"] = float(row.mean())
        loss.meta["r2l"] = float("nan")
    return loss


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    rho: float = 0.9
    eps: float = 1e-6
    weight_decay: float = 1e-4
    lr: float = 1.0
    square_avg: dict = field(default_factory=dict)
    delta_avg: dict = field(default_factory=dict)
    steps: int = 0


def adadelta_step(params: dict[str, Tensor], state: OptimState) -> None:
    """One Adadelta update; weight decay is added to the gradient first.

    Raises ``FloatingPointError`` naming the first parameter with a
    non-finite gradient, before touching any parameter.
    """
    for name, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
    rho, eps = state.rho, state.eps
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad.astype(p.dtype)
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        sq = state.square_avg.get(name)
        if sq is None:
            sq = state.square_avg[name] = np.zeros_like(p.data)
            state.delta_avg[name] = np.zeros_like(p.data)
        acc = state.delta_avg[name]
        sq *= rho
        sq += (1 - rho) * g * g
        delta = np.sqrt(acc + eps) / np.sqrt(sq + eps) * g
        acc *= rho
        acc += (1 - rho) * delta * delta
        p.data = p.data - state.lr * delta
    state.steps += 1


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.dtype.type(scale)
    return total


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    epoch: int
    loss: float
    l2r: float
    r2l: float
    token_accuracy: float
    wall_time: float

    def line(self) -> str:
        return (f"epoch={self.epoch} loss={self.loss:.6f} l2r={self.l2r:.6f} "
                f"r2l={self.r2l:.6f} tokacc={self.token_accuracy:.4f}")


def batch_order(samples: Sequence[Sample], batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle, group similar widths inside windows of 16 batches, shuffle batches."""
    perm = rng.permutation(len(samples))
    window = batch_size * 16
    batches = []
    for lo in range(0, len(perm), window):
        chunk = sorted(perm[lo:lo + window], key=lambda i: (samples[i].image.shape[1], i))
        batches += [chunk[j:j + batch_size] for j in range(0, len(chunk), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def train_step(model: Model, batch: BiBatch, state: OptimState, cfg: TrainConfig) -> tuple[Tensor, float]:
    """Forward the concatenated batch, backpropagate, update.  Returns (loss, token accuracy)."""
    model.train()
    memory = model.encode(batch.images, batch.image_mask)
    if cfg.bidirectional:
        logits = model.decoder.forward(tile_memory(memory, 2), batch.inputs(), batch.masks())
        targets, mask = batch.targets(), batch.masks()
    else:
        logits = model.decoder.forward(memory, batch.l2r_input, batch.token_mask)
        targets, mask = batch.l2r_target, batch.token_mask
    loss = concat_loss(logits, batch, cfg.bidirectional)
    if not np.isfinite(loss.data).all():
        raise TrainingDiverged(f"loss became {loss.item()} at step {state.steps}")
    params = dict(model.named_parameters())
    model.zero_grad()
    loss.backward()
    clip_grad_norm(list(params.values()), cfg.clip_norm)
    adadelta_step(params, state)
    correct = (logits.data.argmax(axis=-1) == targets) & mask
    return loss, float(correct.sum() / mask.sum())


def train(samples: Sequence[Sample], model: Model, cfg: TrainConfig, epochs: Optional[int] = None,
          checkpoint_dir: Optional[Path] = None, on_epoch: Optional[Callable[[TrainReport], None]] = None,
          meta: Optional[dict] = None) -> list[TrainReport]:
    """Train for ``epochs`` passes; keep ``best.npz`` (lowest mean loss) and ``last.npz``."""
    if not samples:
        raise ValueError("training set is empty")
    epochs = cfg.epochs if epochs is None else epochs
    state = OptimState(rho=cfg.rho, eps=cfg.eps, weight_decay=cfg.weight_decay, lr=cfg.lr)
    rng = make_rng(cfg.seed)
    reports, best = [], math.inf
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        totals = np.zeros(4)
        count = 0
        for step, idx in enumerate(batch_order(samples, cfg.batch_size, rng)):
            batch = make_bibatch([samples[i] for i in idx])
            loss, acc = train_step(model, batch, state, cfg)
            n = len(idx)
            totals += n * np.array([loss.item(), loss.meta["l2r"], loss.meta["r2l"], acc])
            count += n
            if cfg.log_every and (step + 1) % cfg.log_every == 0:
                log.info("epoch=%d step=%d loss=%.4f", epoch, step + 1, loss.item())
        mean = totals / count
        report = TrainReport(epoch, float(mean[0]), float(mean[1]), float(mean[2]), float(mean[3]),
                             time.perf_counter() - t0)
        reports.append(report)
        log.info(report.line())
        if checkpoint_dir is not None:
            info = dict(meta or {}, epoch=epoch, loss=report.loss)
            model.save(checkpoint_dir / "last.npz", info)
            if report.loss < best:
                best = report.loss
                model.save(checkpoint_dir / "best.npz", info)
        if on_epoch is not None:
            on_epoch(report)
    return reports
