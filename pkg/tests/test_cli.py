"""Command-line behaviour, exit codes and reproducibility."""

import logging
import shutil
from argparse import Namespace
from pathlib import Path

import pytest

from bttr.cli import main, resolve_config

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def synth_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["-q", "synth", "--out", str(root / "train"), "--n", "8", "--depth", "1", "--seed", "3"]) == 0
    assert main(["-q", "synth", "--out", str(root / "test"), "--n", "3", "--depth", "1", "--seed", "4"]) == 0
    (root / "mini.cfg").write_text("model.preset = mini\ntrain.batch_size = 4\n")
    return root


def train_args(root, out):
    return ["-q", "train", "--data", str(root / "train" / "index.tsv"), "--vocab", str(root / "train" / "vocab.txt"),
            "--config", str(root / "mini.cfg"), "--epochs", "1", "--seed", "5", "--out", str(out)]


@pytest.fixture(scope="module")
def trained(synth_set):
    assert main(train_args(synth_set, synth_set / "ck")) == 0
    return synth_set / "ck" / "last.npz"


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------

def test_render_empty_directory(tmp_path):
    (tmp_path / "in").mkdir()
    assert main(["-q", "render", str(tmp_path / "in"), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "index.tsv").read_text() == ""


def test_render_one_file(tmp_path):
    (tmp_path / "in").mkdir()
    shutil.copy(FIXTURES / "crohme_sample.inkml", tmp_path / "in")
    assert main(["-q", "render", str(tmp_path / "in"), "--out", str(tmp_path / "out"), "--height", "32"]) == 0
    assert (tmp_path / "out" / "index.tsv").read_text() == "crohme_sample.png\tx^{2}+\\frac{a}{b}\n"
    assert (tmp_path / "out" / "crohme_sample.png").is_file()


def test_render_corrupt_file(tmp_path):
    (tmp_path / "in").mkdir()
    shutil.copy(FIXTURES / "crohme_sample.inkml", tmp_path / "in")
    (tmp_path / "in" / "bad.inkml").write_text("<ink><trace>0 0</trac>")
    args = ["-q", "render", str(tmp_path / "in"), "--out", str(tmp_path / "out"), "--height", "32"]
    assert main(args) == 2
    assert main(args + ["--skip-bad"]) == 0
    assert (tmp_path / "out" / "failures.tsv").read_text().startswith("bad.inkml\t")
    assert len((tmp_path / "out" / "index.tsv").read_text().splitlines()) == 1


def test_render_missing_directory(tmp_path):
    assert main(["-q", "render", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


def test_bad_thread_count(tmp_path, monkeypatch):
    (tmp_path / "in").mkdir()
    monkeypatch.setenv("BTTR_THREADS", "zero")
    assert main(["-q", "render", str(tmp_path / "in"), "--out", str(tmp_path / "o")]) == 1


# ---------------------------------------------------------------------------
# usage errors
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["eval", "--pred", "x"], ["infer", "--bogus"],
                                  ["train", "--data", "x", "--out", "y", "--epochs", "many"]])
def test_usage_errors_exit_one(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        code = main(argv)
        raise SystemExit(code)
    assert exc.value.code == 1


def test_unknown_config_key(synth_set, tmp_path):
    (tmp_path / "c.cfg").write_text("train.learning_speed = 3\n")
    argv = train_args(synth_set, tmp_path / "ck")
    argv[argv.index("--config") + 1] = str(tmp_path / "c.cfg")
    assert main(argv) == 1


def test_malformed_config_value(synth_set, tmp_path):
    (tmp_path / "c.cfg").write_text("train.epochs = several\n")
    argv = train_args(synth_set, tmp_path / "ck")
    argv[argv.index("--config") + 1] = str(tmp_path / "c.cfg")
    assert main(argv) == 1


def test_infer_without_checkpoint(tmp_path):
    assert main(["-q", "infer", "--data", str(tmp_path), "--out", str(tmp_path / "p.tsv")]) == 1


def test_missing_files_are_data_errors(tmp_path):
    assert main(["-q", "eval", "--pred", str(tmp_path / "a"), "--truth", str(tmp_path / "b")]) == 2
    assert main(["-q", "train", "--data", str(tmp_path / "none.tsv"), "--out", str(tmp_path), "--toy"]) == 2
    assert main(["-q", "infer", "--checkpoint", str(tmp_path / "no.npz"), "--data", str(tmp_path),
                 "--out", str(tmp_path / "p")]) == 2


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_precedence_flag_over_file_over_default(tmp_path):
    (tmp_path / "c.cfg").write_text("search.beam = 4\nsearch.alpha = 0.5\n")
    args = Namespace(config=str(tmp_path / "c.cfg"), toy=False, seed=None, beam=7, alpha=None, max_len=None)
    _, train, search, audit = resolve_config(args)
    assert (search.beam, search.alpha, search.max_len) == (7, 0.5, 200)
    assert audit["search.beam"] == (7, "flag")
    assert audit["search.alpha"] == (0.5, "file")
    assert audit["search.max_len"] == (200, "default")
    assert audit["train.seed"] == (0, "default")


def test_config_audit_is_logged(synth_set, trained, tmp_path, caplog):
    out = tmp_path / "p.tsv"
    argv = ["infer", "--checkpoint", str(trained), "--data", str(synth_set / "test"), "--out", str(out),
            "--beam", "2", "--max-len", "6"]
    with caplog.at_level(logging.INFO, logger="bttr"):
        assert main(argv) == 0
    assert "config search.beam=2 (flag)" in caplog.text
    caplog.clear()
    assert main(["-q"] + argv) == 0
    assert "config search.beam" not in caplog.text


# ---------------------------------------------------------------------------
# train / infer / eval
# ---------------------------------------------------------------------------

def test_seeded_training_is_reproducible(synth_set, trained, tmp_path, capsys):
    capsys.readouterr()
    assert main(train_args(synth_set, tmp_path / "a")) == 0
    first = capsys.readouterr().out
    assert main(train_args(synth_set, tmp_path / "b")) == 0
    second = capsys.readouterr().out
    loss = [line.split()[1] for line in first.splitlines() if line.startswith("epoch=1 ")]
    assert loss and loss == [line.split()[1] for line in second.splitlines() if line.startswith("epoch=1 ")]


def test_infer_is_byte_identical(synth_set, trained, tmp_path):
    outs = []
    for name in ("a.tsv", "b.tsv"):
        assert main(["-q", "infer", "--checkpoint", str(trained), "--data", str(synth_set / "test"),
                     "--out", str(tmp_path / name), "--beam", "3", "--max-len", "8"]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert len(outs[0].decode().splitlines()) == 3


def test_infer_from_index_and_modes(synth_set, trained, tmp_path):
    for mode in ("joint", "l2r", "r2l"):
        assert main(["-q", "infer", "--checkpoint", str(trained), "--data", str(synth_set / "test" / "index.tsv"),
                     "--out", str(tmp_path / f"{mode}.tsv"), "--beam", "2", "--max-len", "6", "--mode", mode]) == 0
        ids = [line.split("\t")[0] for line in (tmp_path / f"{mode}.tsv").read_text().splitlines()]
        assert ids == sorted(ids) and len(ids) == 3


def test_ensemble_of_two_checkpoints(synth_set, trained, tmp_path):
    assert main(train_args(synth_set, tmp_path / "other")[:-1] + [str(tmp_path / "other")]) == 0
    out = tmp_path / "ens.tsv"
    assert main(["-q", "infer", "--checkpoint", str(trained), "--checkpoint", str(tmp_path / "other" / "best.npz"),
                 "--data", str(synth_set / "test"), "--out", str(out), "--beam", "2", "--max-len", "6"]) == 0
    assert len(out.read_text().splitlines()) == 3


def test_vocab_size_mismatch(synth_set, trained, tmp_path):
    (tmp_path / "v.txt").write_text("a\nb\n")
    assert main(["-q", "infer", "--checkpoint", str(trained), "--vocab", str(tmp_path / "v.txt"),
                 "--data", str(synth_set / "test"), "--out", str(tmp_path / "p")]) == 1


def test_eval_truth_against_itself(synth_set, tmp_path, capsys):
    idx = synth_set / "test" / "index.tsv"
    vocab = synth_set / "test" / "vocab.txt"
    out = tmp_path / "report.txt"
    assert main(["-q", "eval", "--pred", str(idx), "--truth", str(idx), "--vocab", str(vocab),
                 "--out", str(out)]) == 0
    assert "exprate=1.0\n" in capsys.readouterr().out
    assert "exprate=1.0\n" in out.with_suffix(".kv").read_text()
    assert "ExpRate" in out.read_text()


def test_eval_missing_prediction(synth_set, tmp_path):
    idx = synth_set / "test" / "index.tsv"
    lines = idx.read_text().splitlines()
    (tmp_path / "p.tsv").write_text("\n".join(lines[:-1]) + "\n")
    assert main(["-q", "eval", "--pred", str(tmp_path / "p.tsv"), "--truth", str(idx),
                 "--vocab", str(synth_set / "test" / "vocab.txt")]) == 2


def test_gradcheck_command(capsys):
    assert main(["-q", "gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
