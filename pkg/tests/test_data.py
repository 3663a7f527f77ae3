"""Vocabulary, InkML parsing, rasterisation, batching and the synthetic grammar."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bttr.data import (EOS, PAD, SOS, InkMLError, Sample, StrokeSet, TokenizeError, Vocab, canonical,
                       detokenize, generate_expression, layout, load_default_vocab, load_image,
                       make_bibatch, parse_inkml, rasterize, read_inkml, save_image, strip_core,
                       strip_math, synth_generate, tokenize)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def crohme():
    return load_default_vocab("crohme")


@pytest.fixture(scope="module")
def synth_vocab():
    return load_default_vocab("synth")


# ---------------------------------------------------------------------------
# vocabulary and tokenisation
# ---------------------------------------------------------------------------

def test_reserved_ids():
    v = Vocab(["a", "b"])
    assert (v.stoi["<pad>"], v.stoi["<sos>"], v.stoi["<eos>"]) == (PAD, SOS, EOS)
    assert v.tokens == ["a", "b"]


def test_vocab_serialisation_roundtrip(tmp_path, crohme):
    crohme.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt") == crohme
    assert Vocab.loads(crohme.dumps()).itos == crohme.itos


def test_vocab_rejects_duplicates_and_reserved():
    with pytest.raises(ValueError):
        Vocab(["a", "a"])
    with pytest.raises(ValueError):
        Vocab(["<sos>"])


def test_tokenize_examples(crohme):
    ids = tokenize("x^{2}", crohme)
    assert [crohme.itos[i] for i in ids] == ["x", "^", "{", "2", "}"]
    ids = tokenize(r"\frac{a}{b}", crohme)
    assert [crohme.itos[i] for i in ids] == [r"\frac", "{", "a", "}", "{", "b", "}"]


def test_tokenize_prefers_longest_match(crohme):
    ids = tokenize(r"\sin x", crohme)
    assert [crohme.itos[i] for i in ids] == [r"\sin", "x"]


def test_tokenize_error_carries_position(crohme):
    with pytest.raises(TokenizeError) as exc:
        tokenize(r"x + \foo", crohme)
    assert exc.value.position == 4
    assert r"\foo" in str(exc.value)


def test_fixture_truths_roundtrip(crohme):
    lines = [l.strip() for l in (FIXTURES / "truths.txt").read_text().splitlines() if l.strip()]
    assert len(lines) >= 10
    for line in lines:
        ids = tokenize(line, crohme)
        text = detokenize(ids, crohme)
        assert text == canonical(line, crohme)
        assert tokenize(text, crohme) == ids
        assert text.replace(" ", "") == line.replace(" ", "")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(3, 26), min_size=1, max_size=30))
def test_tokenize_inverts_detokenize(ids):
    v = load_default_vocab("synth")
    assert tokenize(detokenize(ids, v), v) == ids


# ---------------------------------------------------------------------------
# InkML
# ---------------------------------------------------------------------------

def test_single_trace():
    ss, truth = parse_inkml('<ink><annotation type="truth">x</annotation><trace>0 0, 1 1</trace></ink>')
    assert len(ss.strokes) == 1
    np.testing.assert_array_equal(ss.strokes[0], [[0, 0], [1, 1]])
    assert truth == "x"


def test_three_traces_keep_order():
    doc = "<ink><annotation type='truth'>1</annotation>" + "".join(
        f"<trace>{i} 0, {i} 1</trace>" for i in range(3)) + "</ink>"
    ss, _ = parse_inkml(doc)
    assert [s[0, 0] for s in ss.strokes] == [0, 1, 2]


def test_crohme_fixture():
    ss, truth = read_inkml(FIXTURES / "crohme_sample.inkml")
    # eight <trace> elements counted by hand in the fixture
    assert len(ss.strokes) == 8
    assert truth == r"$x^{2}+\frac{a}{b}$"
    assert strip_math(truth) == r"x^{2}+\frac{a}{b}"
    assert [len(s) for s in ss.strokes] == [5, 4, 6, 2, 2, 7, 2, 5]


def test_missing_truth_is_flagged():
    ss, truth = parse_inkml("<ink><trace>0 0, 1 1</trace></ink>")
    assert truth is None and ss.missing_truth
    assert len(ss.strokes) == 1


def test_malformed_markup_reports_byte_offset():
    doc = b"<ink>\n<trace>0 0, 1 1</trace>\n<trace>0 0</trac></ink>"
    with pytest.raises(InkMLError) as exc:
        parse_inkml(doc)
    assert exc.value.offset is not None
    assert 25 <= exc.value.offset <= len(doc)


def test_traces_with_extra_channels_keep_xy():
    ss, _ = parse_inkml("<ink><trace>0 0 5, 1 2 6</trace></ink>")
    np.testing.assert_array_equal(ss.strokes[0], [[0, 0], [1, 2]])


# ---------------------------------------------------------------------------
# rasterisation
# ---------------------------------------------------------------------------

def test_horizontal_stroke_is_a_band():
    img = rasterize([np.array([[0.0, 0.0], [10.0, 0.0]])], target_height=32, pen_width=2, margin=4)
    profile = img.sum(axis=1)
    rows = np.nonzero(profile)[0]
    assert rows.max() - rows.min() <= 4
    peak = int(np.argmax(profile))
    assert np.all(np.diff(profile[: peak + 1]) >= 0) and np.all(np.diff(profile[peak:]) <= 0)


def test_uniform_scaling_and_translation_invariance():
    rng = np.random.default_rng(0)
    strokes = [rng.random((6, 2)) * 40 for _ in range(3)]
    base = rasterize(strokes, 48)
    scaled = rasterize([s * 2 for s in strokes], 48)
    moved = rasterize([s + np.array([100.0, -7.0]) for s in strokes], 48)
    np.testing.assert_allclose(scaled, base, atol=1e-5)
    np.testing.assert_allclose(moved, base, atol=1e-5)


def test_height_width_and_range():
    img = rasterize([np.array([[0.0, 0.0], [30.0, 10.0]])], target_height=20, margin=3)
    assert img.shape[0] == 26
    assert img.shape[1] == 60 + 6
    assert img.dtype == np.float32 and img.min() >= 0 and img.max() <= 1


def test_width_is_clamped():
    img = rasterize([np.array([[0.0, 0.0], [1000.0, 1.0]])], target_height=32, max_width=200)
    assert img.shape[1] <= 200


def test_diagonal_ink_matches_length_times_pen():
    pen = 2.0
    img = rasterize([np.array([[0.0, 0.0], [1.0, 1.0]])], target_height=100, pen_width=pen, margin=4)
    expect = np.hypot(100, 100) * pen
    assert abs(img.sum() - expect) <= 0.2 * expect
    assert abs((img >= 0.5).sum() - expect) <= 0.2 * expect


def test_single_point_renders_centred_dot():
    img = rasterize([np.array([[5.0, 5.0]])], target_height=16, margin=2)
    assert img.sum() > 0
    ys, xs = np.nonzero(img)
    assert abs(ys.mean() - (img.shape[0] - 1) / 2) < 1 and abs(xs.mean() - (img.shape[1] - 1) / 2) < 1


def test_empty_strokeset_is_an_error():
    with pytest.raises(ValueError):
        rasterize(StrokeSet([]))


def test_image_roundtrip(tmp_path):
    img = rasterize(read_inkml(FIXTURES / "crohme_sample.inkml")[0], 32)
    save_image(tmp_path / "a.png", img)
    back = load_image(tmp_path / "a.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

def img(h=4, w=5):
    return np.ones((h, w), dtype=np.float32)


def test_bibatch_definition_example():
    a, b = 3, 4
    bb = make_bibatch([Sample(img(), [a, b])], max_len=4)
    assert bb.l2r_input.tolist() == [[SOS, a, b, PAD]]
    assert bb.l2r_target.tolist() == [[a, b, EOS, PAD]]
    assert bb.r2l_input.tolist() == [[EOS, b, a, PAD]]
    assert bb.r2l_target.tolist() == [[b, a, SOS, PAD]]
    assert bb.token_mask.tolist() == [[True, True, True, False]]


def test_single_token_sample():
    bb = make_bibatch([Sample(img(), [5])], max_len=3)
    assert bb.r2l_target[0, :2].tolist() == [5, SOS]


def test_overlong_sample_is_named():
    with pytest.raises(ValueError, match="long_one"):
        make_bibatch([Sample(img(), [3, 4, 5], "long_one")], max_len=3)


def test_images_padded_bottom_right_with_mask():
    bb = make_bibatch([Sample(img(2, 3), [3]), Sample(img(4, 2), [4])])
    assert bb.images.shape == (2, 4, 3)
    assert bb.images[0, 2:].sum() == 0 and bb.image_mask[0].sum() == 6
    assert bb.image_mask[1, :, 2].sum() == 0


def test_sample_rejects_reserved_and_empty():
    with pytest.raises(ValueError):
        Sample(img(), [])
    with pytest.raises(ValueError):
        Sample(img(), [3, EOS])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(3, 40), min_size=1, max_size=12), min_size=1, max_size=6))
def test_reversal_invariant(seqs):
    bb = make_bibatch([Sample(img(), s) for s in seqs])
    for i, s in enumerate(seqs):
        assert strip_core(bb.l2r_input[i]) == s
        assert strip_core(bb.r2l_input[i])[::-1] == s
        assert strip_core(bb.r2l_target[i])[::-1] == s
        assert bb.token_mask[i].sum() == len(s) + 1


# ---------------------------------------------------------------------------
# synthetic grammar
# ---------------------------------------------------------------------------

def balanced(tokens):
    depth = 0
    for t in tokens:
        depth += (t == "{") - (t == "}")
        if depth < 0:
            return False
    return depth == 0


def test_depth_zero_is_single_symbols():
    rng = np.random.default_rng(0)
    assert all(len(generate_expression(rng, 0)) == 1 for _ in range(100))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 4))
def test_grammar_balanced_and_bounded(seed, depth):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        toks = generate_expression(rng, depth)
        assert balanced(toks)
        assert 1 <= len(toks) <= 4 * depth + 3


def test_length_bound_is_reached():
    rng = np.random.default_rng(0)
    lengths = [len(generate_expression(rng, 2)) for _ in range(3000)]
    assert max(lengths) == 11


def test_layout_covers_every_grammar_symbol(synth_vocab):
    rng = np.random.default_rng(0)
    for _ in range(200):
        toks = generate_expression(rng, 3)
        assert len(layout(toks, rng, 0.04).strokes) >= 1


def test_synth_generate_samples(synth_vocab):
    samples = synth_generate(np.random.default_rng(0), 20, 2, synth_vocab)
    assert len(samples) == 20
    for s in samples:
        assert s.image.shape[0] == 32 + 4
        assert balanced([synth_vocab.itos[i] for i in s.tokens])
    again = synth_generate(np.random.default_rng(0), 20, 2, synth_vocab)
    assert all(np.array_equal(a.image, b.image) and a.tokens == b.tokens for a, b in zip(samples, again))


def test_synth_requires_grammar_symbols():
    with pytest.raises(ValueError, match="lacks"):
        synth_generate(np.random.default_rng(0), 1, 1, Vocab(["x"]))
