"""Command-line entry point: render, synth, train, infer, eval, gradcheck, selftest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from . import __version__
from .config import ModelConfig, SearchParams, TrainConfig, apply_overrides, config_keys, load_kv
from .data import (InkMLError, Sample, TokenizeError, Vocab, load_default_vocab, load_image, rasterize,
                   read_inkml, save_image, strip_math, synth_generate, tokenize)
from .evaluation import MissingIdsError, evaluate
from .inference import ConfigError, recognize, read_tsv, write_predictions
from .model import Model
from .numerics import make_rng

log = logging.getLogger("bttr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
IMAGE_SUFFIXES = (".png", ".pgm")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def threads() -> int:
    """Worker cap from ``BTTR_THREADS`` (default 1)."""
    raw = os.environ.get("BTTR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"BTTR_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("BTTR_THREADS must be >= 1")
    return n


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def resolve_config(args, vocab_size: Optional[int] = None):
    """Model, train and search records with precedence flag > file > default.

    Returns the records plus a ``key -> (value, source)`` audit map.
    """
    try:
        return _resolve_config(args, vocab_size)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None


def _resolve_config(args, vocab_size):
    file_values = load_kv(Path(args.config)) if getattr(args, "config", None) else {}
    preset = "toy" if getattr(args, "toy", False) else file_values.get("model.preset", "full")
    source = {}
    model = ModelConfig.preset(preset, vocab_size) if vocab_size is not None else None
    train, search = TrainConfig(), SearchParams()
    apply_overrides(model, train, search, {k: v for k, v in file_values.items() if k != "model.preset"})
    for k in file_values:
        source[k] = "file"
    source["model.preset"] = "flag" if getattr(args, "toy", False) else ("file" if "model.preset" in file_values else "default")
    flags = {"train.seed": getattr(args, "seed", None), "search.beam": getattr(args, "beam", None),
             "search.alpha": getattr(args, "alpha", None), "search.max_len": getattr(args, "max_len", None),
             "train.epochs": getattr(args, "epochs", None), "train.batch_size": getattr(args, "batch_size", None)}
    flags = {k: str(v) for k, v in flags.items() if v is not None}
    apply_overrides(model, train, search, flags)
    for k in flags:
        source[k] = "flag"
    audit = {"model.preset": (preset, source["model.preset"])}
    for key, (rec, name) in config_keys().items():
        if key == "model.preset":
            continue
        obj = {"encoder": model.encoder if model else None, "decoder": model.decoder if model else None,
               "train": train, "search": search, "model": model}[key.split(".")[0]]
        if obj is not None:
            audit[key] = (getattr(obj, name), source.get(key, "default"))
    return model, train, search, audit


def log_config(audit: dict) -> None:
    for key in sorted(audit):
        value, src = audit[key]
        log.info("config %s=%s (%s)", key, value, src)


def _load_vocab(path: Optional[str], default: str) -> Vocab:
    if path is None:
        return load_default_vocab(default)
    p = Path(path)
    if not p.is_file():
        raise DataError(f"vocab file not found: {p}")
    return Vocab.load(p)


def read_index(path: Path, vocab: Vocab) -> list[Sample]:
    """``image_path<TAB>truth`` index; paths are relative to the index file."""
    if not path.is_file():
        raise DataError(f"index file not found: {path}")
    rows = read_tsv(path)
    samples = []
    for rel, truth in rows.items():
        img_path = (path.parent / rel) if not Path(rel).is_absolute() else Path(rel)
        if not img_path.is_file():
            raise DataError(f"{path}: image not found: {img_path}")
        samples.append(Sample(load_image(img_path), tokenize(strip_math(truth), vocab), Path(rel).stem))
    return samples


def _images_for_infer(data: Path) -> list[tuple[str, Path]]:
    if data.is_dir():
        files = sorted(p for p in data.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        return [(p.stem, p) for p in files]
    if data.is_file():
        return [(Path(rel).stem, data.parent / rel) for rel in read_tsv(data)]
    raise DataError(f"no such file or directory: {data}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _render_one(path: Path, out_dir: Path, height: int, pen: float):
    try:
        strokes, truth = read_inkml(path)
        if not strokes.strokes:
            raise InkMLError("no traces")
        img = rasterize(strokes, height, pen)
    except (InkMLError, ValueError, OSError) as exc:
        return path, None, None, str(exc)
    out = out_dir / (path.stem + ".png")
    save_image(out, img)
    return path, out, truth, None


def cmd_render(args) -> int:
    src, out_dir = Path(args.inkml_dir), Path(args.out)
    if not src.is_dir():
        raise DataError(f"not a directory: {src}")
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(src.glob("*.inkml"))
    with ThreadPoolExecutor(max_workers=threads()) as pool:
        results = list(pool.map(lambda p: _render_one(p, out_dir, args.height, args.pen_width), files))
    index, failures = [], []
    for path, out, truth, err in results:
        if err is not None:
            failures.append(f"{path.name}\t{err}")
        elif truth is None:
            failures.append(f"{path.name}\tmissing truth annotation (image written)")
        else:
            index.append(f"{out.name}\t{strip_math(truth)}\n")
    (out_dir / "index.tsv").write_text("".join(index), encoding="utf-8")
    (out_dir / "failures.tsv").write_text("".join(f + "\n" for f in failures), encoding="utf-8")
    print(f"rendered {len(index)} of {len(files)} files; {len(failures)} listed in failures.tsv")
    if failures and not args.skip_bad:
        for f in failures:
            log.error("render failed: %s", f)
        return EXIT_DATA
    return EXIT_OK


def cmd_synth(args) -> int:
    vocab = _load_vocab(args.vocab, "synth")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = synth_generate(make_rng(args.seed), args.n, args.depth, vocab, target_height=args.height)
    lines = []
    for s in samples:
        save_image(out_dir / f"{s.name}.png", s.image)
        lines.append(f"{s.name}.png\t{vocab.detokenize(s.tokens)}\n")
    (out_dir / "index.tsv").write_text("".join(lines), encoding="utf-8")
    vocab.save(out_dir / "vocab.txt")
    print(f"wrote {len(samples)} samples to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import TrainingDiverged, train
    vocab = _load_vocab(args.vocab, "crohme")
    model_cfg, train_cfg, _, audit = resolve_config(args, len(vocab))
    log_config(audit)
    samples = read_index(Path(args.data), vocab)
    if not samples:
        raise DataError(f"{args.data}: no samples")
    model = Model(model_cfg, seed=train_cfg.seed)
    meta = {"vocab": vocab.dumps(), "seed": train_cfg.seed}
    try:
        train(samples, model, train_cfg, checkpoint_dir=Path(args.out), meta=meta,
              on_epoch=lambda r: print(r.line(), flush=True))
    except (TrainingDiverged, FloatingPointError) as exc:
        raise NumericFailure(str(exc)) from None
    return EXIT_OK


def load_models(paths: list[str]) -> tuple[list[Model], Optional[Vocab]]:
    models, vocabs = [], []
    for p in paths:
        if not Path(p).is_file():
            raise DataError(f"checkpoint not found: {p}")
        try:
            model, meta = Model.load(p)
        except (KeyError, ValueError, OSError) as exc:
            raise DataError(f"cannot read checkpoint {p}: {exc}") from None
        models.append(model)
        vocabs.append(meta.get("vocab"))
    known = {v for v in vocabs if v is not None}
    if len(known) > 1:
        raise ConfigError("checkpoints were trained with different vocabularies")
    return models, Vocab.loads(known.pop()) if known else None


def cmd_infer(args) -> int:
    if not args.checkpoint:
        raise UsageError("infer needs at least one --checkpoint")
    models, ckpt_vocab = load_models(args.checkpoint)
    vocab = _load_vocab(args.vocab, "crohme") if args.vocab or ckpt_vocab is None else ckpt_vocab
    if any(m.config.vocab_size != len(vocab) for m in models):
        raise ConfigError(f"vocabulary has {len(vocab)} entries but a model expects "
                          f"{sorted({m.config.vocab_size for m in models})}")
    _, _, params, audit = resolve_config(args)
    log_config({k: v for k, v in audit.items() if k.startswith("search.")})
    items = _images_for_infer(Path(args.data))
    if len(models) > 1:
        log.info("ensemble of %d models", len(models))
    rows = []
    for image_id, path in items:
        if not path.is_file():
            raise DataError(f"image not found: {path}")
        rows.append((image_id, recognize(load_image(path), models, params, vocab, args.mode)))
    write_predictions(args.out, rows)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    vocab = _load_vocab(args.vocab, "crohme")
    for p in (args.pred, args.truth):
        if not Path(p).is_file():
            raise DataError(f"file not found: {p}")
    result = evaluate(args.pred, args.truth, vocab)
    print(result.report(), end="")
    print(result.kv(), end="")
    if args.out:
        out = Path(args.out)
        out.write_text(result.report(), encoding="utf-8")
        out.with_suffix(".kv").write_text(result.kv(), encoding="utf-8")
    return EXIT_OK


def _print_rows(rows) -> bool:
    ok = True
    for name, passed, detail in rows:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}", flush=True)
        ok &= passed
    return ok


def cmd_gradcheck(args) -> int:
    from .selftest import gradient_suite
    ok = _print_rows(gradient_suite(seeds=args.seeds, first_seed=args.seed or 0))
    if not ok:
        raise NumericFailure("gradient check failed")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all
    ok = _print_rows(run_all(quick=not args.full))
    if not ok:
        raise NumericFailure("self-test failed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bttr", description="Bidirectional transformer handwritten-math recogniser.")
    p.add_argument("--version", action="version", version=f"bttr {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, search=False):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--vocab", help="vocabulary file, one token per line")
        sp.add_argument("--toy", action="store_true", help="use the reduced model preset")
        if search:
            sp.add_argument("--beam", type=int)
            sp.add_argument("--alpha", type=float)
            sp.add_argument("--max-len", type=int, dest="max_len")

    sp = sub.add_parser("render", help="rasterise a directory of InkML files")
    sp.add_argument("inkml_dir")
    sp.add_argument("--out", required=True)
    sp.add_argument("--skip-bad", action="store_true", dest="skip_bad")
    sp.add_argument("--height", type=int, default=128)
    sp.add_argument("--pen-width", type=float, default=2.0, dest="pen_width")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("synth", help="write a synthetic image set with an index")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--depth", type=int, default=2)
    sp.add_argument("--height", type=int, default=32)
    sp.set_defaults(func=cmd_synth, seed=0)

    sp = sub.add_parser("train", help="train a model from an index file")
    common(sp)
    sp.add_argument("--data", required=True, help="index file: image_path<TAB>truth")
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="recognise images; several checkpoints form an ensemble")
    common(sp, search=True)
    sp.add_argument("--checkpoint", action="append", default=[])
    sp.add_argument("--data", required=True, help="image directory or index file")
    sp.add_argument("--out", required=True, help="prediction file")
    sp.add_argument("--mode", choices=("joint", "l2r", "r2l"), default="joint")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="score a prediction file against a truth index")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--vocab")
    sp.add_argument("--out", help="write the text report here and key=value beside it (.kv)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every op and a tiny model")
    sp.add_argument("--seeds", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0, help="first seed")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("selftest", help="run the invariant suites")
    sp.add_argument("--full", action="store_true", help="full-size suites instead of the quick ones")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (DataError, InkMLError, TokenizeError, MissingIdsError, OSError) as exc:
        print(f"bttr {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ConfigError, KeyError) as exc:
        print(f"bttr {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, FloatingPointError) as exc:
        print(f"bttr {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"bttr {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
