"""Scaled-down synthetic experiment: train the toy preset, compare search modes.

Results and the trained checkpoint are cached under a directory keyed by a
hash of the experiment settings, so repeated runs only re-evaluate when
the cache is missing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ModelConfig, SearchParams, TrainConfig
from .data import load_default_vocab, synth_generate
from .evaluation import EvalResult, token_edit_distance
from .inference import recognize_ids
from .model import Model
from .training import train

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    n_train: int = 2000
    n_test: int = 200
    depth: int = 2
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    data_seed: int = 1234
    test_seed: int = 4321
    beam: int = 10
    max_len: int = 200
    alpha: float = 1.0
    preset: str = "toy"

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _score(preds: list, truths: list) -> dict:
    r = EvalResult.from_distances([token_edit_distance(p, t) for p, t in zip(preds, truths)])
    return asdict(r)


def run_experiment(cfg: ExperimentConfig, cache_root: Path, force: bool = False) -> dict:
    """Train (or reuse) the checkpoint and evaluate joint, L2R and R2L search."""
    out = Path(cache_root) / cfg.key()
    result_path = out / "results.json"
    if result_path.is_file() and not force:
        return json.loads(result_path.read_text())
    out.mkdir(parents=True, exist_ok=True)
    vocab = load_default_vocab("synth")
    train_set = synth_generate(np.random.default_rng(cfg.data_seed), cfg.n_train, cfg.depth, vocab)
    test_set = synth_generate(np.random.default_rng(cfg.test_seed), cfg.n_test, cfg.depth, vocab)
    seen = {tuple(s.tokens) for s in train_set}
    overlap = float(np.mean([tuple(s.tokens) in seen for s in test_set]))

    ckpt = out / "last.npz"
    history_path = out / "history.json"
    if ckpt.is_file() and history_path.is_file() and not force:
        model, _ = Model.load(ckpt)
        history = json.loads(history_path.read_text())
    else:
        model = Model(ModelConfig.preset(cfg.preset, len(vocab)), seed=cfg.seed)
        tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed)
        t0, c0 = time.perf_counter(), time.process_time()
        reports = train(train_set, model, tcfg, checkpoint_dir=out, meta={"vocab": vocab.dumps()},
                        on_epoch=lambda r: log.info("%s (%.1fs)", r.line(), r.wall_time))
        history = {"train_seconds": time.perf_counter() - t0, "train_cpu_seconds": time.process_time() - c0,
                   "epochs": [asdict(r) for r in reports]}
        history_path.write_text(json.dumps(history, indent=1))
        model.eval()

    params = SearchParams(beam=cfg.beam, max_len=cfg.max_len, alpha=cfg.alpha)
    truths = [list(s.tokens) for s in test_set]
    scores, preds_by_mode, timing = {}, {}, {}
    for mode in ("joint", "l2r", "r2l"):
        t0 = time.perf_counter()
        preds = [list(recognize_ids(s.image, model, params, mode)) for s in test_set]
        timing[mode] = time.perf_counter() - t0
        preds_by_mode[mode] = [vocab.detokenize(p) for p in preds]
        scores[mode] = _score(preds, truths)
    balanced = float(np.mean([_balanced(p) for p in preds_by_mode["joint"]]))
    result = {
        "config": asdict(cfg),
        "train_seconds": history["train_seconds"],
        "train_cpu_seconds": history["train_cpu_seconds"],
        "final_loss": history["epochs"][-1]["loss"],
        "test_overlap_with_train": overlap,
        "scores": scores,
        "balanced_braces": balanced,
        "search_seconds": timing,
        "predictions": {m: p for m, p in preds_by_mode.items()},
        "truths": [vocab.detokenize(t) for t in truths],
    }
    result_path.write_text(json.dumps(result, indent=1))
    return result


def _balanced(markup: str) -> bool:
    depth = 0
    for tok in markup.split():
        depth += (tok == "{") - (tok == "}")
        if depth < 0:
            return False
    return depth == 0


def main(argv: Optional[list] = None) -> None:
    import argparse
    p = argparse.ArgumentParser(description="run the scaled synthetic experiment")
    p.add_argument("--cache", default=".cache/experiment")
    p.add_argument("--epochs", type=int, default=ExperimentConfig.epochs)
    p.add_argument("--force", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    res = run_experiment(ExperimentConfig(epochs=args.epochs), Path(args.cache), args.force)
    print(json.dumps({k: res[k] for k in ("train_seconds", "train_cpu_seconds", "final_loss", "scores", "balanced_braces")}, indent=1))


if __name__ == "__main__":
    main()
