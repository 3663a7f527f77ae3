"""Edit distance and recognition rates."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bttr.data import load_default_vocab
from bttr.evaluation import EvalResult, MissingIdsError, evaluate, evaluate_pairs, token_edit_distance


def reference_distance(a, b):
    """Full-table DP that also rebuilds an edit script and replays it."""
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    i, j, out, ops = n, m, [], 0
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (a[i - 1] != b[j - 1]):
            ops += a[i - 1] != b[j - 1]
            out.append(b[j - 1])
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            ops += 1
            i -= 1
        else:
            ops += 1
            out.append(b[j - 1])
            j -= 1
    assert out[::-1] == list(b) and ops == d[n][m]
    return d[n][m]


tokens = st.lists(st.integers(0, 4), max_size=12)


def test_worked_examples():
    assert token_edit_distance("kitten", "sitting") == 3
    assert token_edit_distance([], [1, 2, 3]) == 3
    assert token_edit_distance([1, 2, 3], [1, 2, 3]) == 0
    assert token_edit_distance([1, 2], [2, 1]) == 2
    assert token_edit_distance(["x", "^", "2"], ["x", "^", "3"]) == 1


@settings(max_examples=300, deadline=None)
@given(tokens, tokens)
def test_matches_reference_dp(a, b):
    assert token_edit_distance(a, b) == reference_distance(a, b)


@settings(max_examples=300, deadline=None)
@given(tokens, tokens, tokens)
def test_metric_axioms(a, b, c):
    dab = token_edit_distance(a, b)
    assert dab == token_edit_distance(b, a)
    assert (dab == 0) == (a == b)
    assert token_edit_distance(a, c) <= dab + token_edit_distance(b, c)
    assert abs(len(a) - len(b)) <= dab <= max(len(a), len(b))


def test_rates_are_nested():
    r = EvalResult.from_distances([0, 0, 1, 2, 5])
    assert (r.exprate, r.le1_rate, r.le2_rate) == (0.4, 0.6, 0.8)
    assert r.mean_distance == pytest.approx(1.6)
    assert EvalResult.from_distances([]).n_samples == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=40))
def test_rates_ordering(ds):
    r = EvalResult.from_distances(ds)
    assert 0 <= r.exprate <= r.le1_rate <= r.le2_rate <= 1


def test_report_formats():
    r = EvalResult.from_distances([0, 1])
    assert "ExpRate           50.00%" in r.report()
    assert "exprate=0.5\n" in r.kv() and r.kv().startswith("n_samples=2\n")


def test_pairs_require_same_ids():
    with pytest.raises(MissingIdsError) as exc:
        evaluate_pairs({"a": [1], "c": [2]}, {"a": [1], "b": [2]})
    assert exc.value.missing_pred == ["b"] and exc.value.missing_truth == ["c"]
    assert "b" in str(exc.value)


def test_files(tmp_path):
    vocab = load_default_vocab("crohme")
    (tmp_path / "pred.tsv").write_text("a\tx ^ { 2 }\nb\t\\frac { a } { c }\n")
    (tmp_path / "truth.tsv").write_text("imgs/a.png\tx^{2}\nimgs/b.png\t\\frac{a}{b}\n")
    r = evaluate(tmp_path / "pred.tsv", tmp_path / "truth.tsv", vocab)
    assert (r.n_samples, r.exprate, r.le1_rate) == (2, 0.5, 1.0)


def test_identical_files_score_one(tmp_path):
    vocab = load_default_vocab("crohme")
    text = "a\tx + y\nb\t\\sqrt { 2 }\n"
    (tmp_path / "p.tsv").write_text(text)
    r = evaluate(tmp_path / "p.tsv", tmp_path / "p.tsv", vocab)
    assert r.exprate == 1.0 and r.mean_distance == 0.0


def test_numpy_rows_agree_on_long_inputs():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = list(rng.integers(0, 3, size=60))
        b = list(rng.integers(0, 3, size=45))
        assert token_edit_distance(a, b) == reference_distance(a, b)
