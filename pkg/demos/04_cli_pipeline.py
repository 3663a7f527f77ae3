"""End to end through the command line: synthesise, train, recognise, score.

A few epochs of the toy preset on 300 samples; expect low accuracy, the point
is the plumbing.  Pass a directory to keep the files, otherwise a temporary
one is used.
"""

import sys
import tempfile
from pathlib import Path

from bttr.cli import main

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="bttr-demo-"))
print("working in", work)


def run(*argv):
    print("$ bttr", " ".join(argv))
    code = main(list(argv))
    if code:
        raise SystemExit(code)


run("-q", "synth", "--out", str(work / "train"), "--n", "300", "--depth", "1", "--seed", "1")
run("-q", "synth", "--out", str(work / "test"), "--n", "20", "--depth", "1", "--seed", "2")
vocab = str(work / "train" / "vocab.txt")
run("-q", "train", "--toy", "--data", str(work / "train" / "index.tsv"), "--vocab", vocab,
    "--epochs", "4", "--batch-size", "16", "--out", str(work / "ckpt"))
for mode in ("joint", "l2r"):
    out = str(work / f"pred_{mode}.tsv")
    run("-q", "infer", "--checkpoint", str(work / "ckpt" / "best.npz"), "--data", str(work / "test"),
        "--out", out, "--beam", "5", "--max-len", "20", "--mode", mode)
    run("-q", "eval", "--pred", out, "--truth", str(work / "test" / "index.tsv"), "--vocab", vocab)
