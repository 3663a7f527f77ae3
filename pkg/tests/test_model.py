"""Encoder, decoder and model plumbing."""

import numpy as np
import pytest

from bttr.config import EncoderConfig, ModelConfig
from bttr.data import EOS, SOS
from bttr.decoder import causal_mask, decode_step, word_pos_encoding
from bttr.encoder import Encoder, image_pos_encoding, sinusoid
from bttr.model import Model
from bttr.numerics import ShapeError, no_grad


def mini(vocab=10, seed=0):
    m = Model(ModelConfig.preset("mini", vocab), seed=seed)
    m.eval()
    return m


# ---------------------------------------------------------------------------
# positional encodings
# ---------------------------------------------------------------------------

def test_sinusoid_interleaves_sin_cos():
    pe = sinusoid(np.array([0.0, 1.0, 2.0]), 6)
    np.testing.assert_allclose(pe[0], [0, 1, 0, 1, 0, 1])
    np.testing.assert_allclose(pe[2, 0], np.sin(2.0))
    np.testing.assert_allclose(pe[2, 3], np.cos(2.0 / 10000 ** (2 / 6)))


def test_image_encoding_uses_normalised_coordinates():
    pe = image_pos_encoding(4, 8, 8)
    half = 4
    # row half depends on x / H only, column half on y / W only
    np.testing.assert_allclose(pe[1, :, 0], np.sin(1 / 4))
    np.testing.assert_allclose(pe[:, 3, half], np.sin(3 / 8))
    np.testing.assert_allclose(pe[2, 5, :half], sinusoid(np.array(2 / 4), half))
    np.testing.assert_allclose(pe[2, 5, half:], sinusoid(np.array(5 / 8), half))


def test_image_encoding_swap_and_valid_extent():
    swapped = image_pos_encoding(4, 8, 8, swap=True)
    np.testing.assert_allclose(swapped[1, 0, 0], np.sin(1 / 8))
    padded = image_pos_encoding(6, 10, 8, valid_h=4, valid_w=8)
    np.testing.assert_allclose(padded[:4, :8], image_pos_encoding(4, 8, 8))


def test_image_encoding_requires_multiple_of_four():
    with pytest.raises(ValueError):
        image_pos_encoding(2, 2, 6)


def test_word_encoding_matches_sinusoid():
    np.testing.assert_allclose(word_pos_encoding(np.arange(3), 4), sinusoid(np.arange(3.0), 4))


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

def test_channel_trace_and_downsampling():
    cfg = EncoderConfig()
    assert cfg.channel_trace() == [48, 432, 216, 600, 300, 684]
    assert cfg.downsample == 8
    enc = Encoder(EncoderConfig(growth_rate=4, block_depth=2, n_blocks=3), 16, np.random.default_rng(0))
    enc.eval()
    with no_grad():
        mem = enc.encode(np.random.default_rng(0).random((2, 33, 50)))
    assert mem.grid == (5, 7)
    assert mem.features.shape == (2, 35, 16)
    assert mem.key_mask.all()


def test_encoder_mask_follows_padding():
    enc = Encoder(EncoderConfig(growth_rate=2, block_depth=1, n_blocks=2), 8, np.random.default_rng(0))
    enc.eval()
    mask = np.zeros((1, 16, 32), dtype=bool)
    mask[0, :8, :12] = True
    with no_grad():
        mem = enc.encode(np.zeros((1, 16, 32)), mask)
    km = mem.key_mask.reshape(mem.grid)
    assert km.shape == (4, 8)
    assert km[:2, :3].all() and not km[2:].any() and not km[:, 3:].any()


def test_encoder_rejects_tiny_image():
    enc = Encoder(EncoderConfig(growth_rate=2, block_depth=1, n_blocks=3), 8, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        enc.encode(np.zeros((3, 20)))


def test_encoder_eval_is_batch_independent():
    m = mini()
    rng = np.random.default_rng(1)
    a, b = rng.random((12, 12)), rng.random((12, 12))
    with no_grad():
        alone = m.encode(a).features.data[0]
        pair = m.encode(np.stack([a, b])).features.data[0]
    np.testing.assert_allclose(alone, pair, atol=1e-6)


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------

def test_causal_mask():
    m = causal_mask(3)
    assert np.isneginf(m[0, 1]) and m[1, 0] == 0 and m[2, 2] == 0
    with pytest.raises(ValueError):
        causal_mask(0)


@pytest.mark.parametrize("seed", range(5))
def test_future_tokens_do_not_change_past_logits(seed):
    m = mini(seed=seed)
    rng = np.random.default_rng(seed)
    with no_grad():
        mem = m.encode(rng.random((8, 10)))
        ids = np.array([[SOS, 3, 4, 5, 6, 7]])
        base = m.decoder.forward(mem, ids).data
        for j in range(1, 6):
            other = ids.copy()
            other[0, j] = 9
            out = m.decoder.forward(mem, other).data
            np.testing.assert_array_equal(out[0, :j], base[0, :j])
            assert not np.array_equal(out[0, j:], base[0, j:])


@pytest.mark.parametrize("seed", range(5))
def test_incremental_matches_full_pass(seed):
    m = mini(seed=seed)
    rng = np.random.default_rng(seed)
    with no_grad():
        mem = m.encode(rng.random((8, 14)))
        ids = np.concatenate([[EOS], rng.integers(3, 10, size=9)])[None]
        full = m.decoder.forward(mem, ids).data[0]
        state = m.decoder.init_state(mem)
        for t in range(ids.shape[1]):
            logits, state = m.decoder.step(state, ids[:, t])
            np.testing.assert_allclose(logits[0], full[t], atol=1e-5)


def test_decode_step_skips_absorbed_prefix():
    m = mini()
    with no_grad():
        mem = m.encode(np.random.default_rng(0).random((8, 8)))
        first, state = decode_step(m.decoder, mem, [[SOS, 3]])
        second, state = decode_step(m.decoder, mem, [[SOS, 3, 4]], state)
        direct, _ = decode_step(m.decoder, mem, [[SOS, 3, 4]])
    assert state.t == 3
    np.testing.assert_allclose(second, direct, atol=1e-6)
    with pytest.raises(ValueError):
        decode_step(m.decoder, mem, [[SOS, 3, 4]], state)


def test_padding_keys_do_not_affect_valid_positions():
    m = mini()
    with no_grad():
        mem = m.encode(np.random.default_rng(0).random((8, 8)))
        ids = np.array([[SOS, 3, 4, 0, 0]])
        mask = np.array([[True, True, True, False, False]])
        a = m.decoder.forward(mem, ids, mask).data
        ids2 = ids.copy()
        ids2[0, 3:] = 7
        b = m.decoder.forward(mem, ids2, mask).data
    np.testing.assert_array_equal(a[0, :3], b[0, :3])


def test_memory_padding_is_ignored_by_cross_attention():
    m = mini()
    rng = np.random.default_rng(3)
    im = rng.random((8, 8))
    padded = np.zeros((1, 8, 16))
    padded[0, :, :8] = im
    mask = np.zeros((1, 8, 16), dtype=bool)
    mask[0, :, :8] = True
    with no_grad():
        mem_a = m.encode(im)
        mem_b = m.encode(padded, mask)
        ids = np.array([[SOS, 3, 4]])
        # padded keys carry zero attention weight, so only real-region features matter
        la = m.decoder.forward(mem_a, ids).data
        valid = mem_b.key_mask[0]
        mem_b.features.data[0, ~valid] = 1e3
        lb = m.decoder.forward(mem_b, ids).data
        mem_b.features.data[0, ~valid] = -1e3
        lc = m.decoder.forward(mem_b, ids).data
    np.testing.assert_allclose(lb, lc, atol=1e-5)
    assert la.shape == lb.shape


def test_dropout_only_in_training():
    m = Model(ModelConfig.preset("toy", 12), seed=0)
    rng = np.random.default_rng(0)
    with no_grad():
        m.eval()
        mem = m.encode(rng.random((16, 16)))
        ids = np.array([[SOS, 3, 4]])
        a = m.decoder.forward(mem, ids).data
        b = m.decoder.forward(mem, ids).data
        m.train()
        c = m.decoder.forward(mem, ids).data
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_sequence_longer_than_positions_is_rejected():
    m = mini()
    with no_grad():
        mem = m.encode(np.zeros((8, 8)))
        with pytest.raises(ValueError):
            m.decoder.forward(mem, np.full((1, m.decoder.max_positions + 1), 3))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def test_save_load_roundtrip(tmp_path):
    m = Model(ModelConfig.preset("mini", 11), seed=4)
    m.save(tmp_path / "m.npz", {"note": "x"})
    m2, meta = Model.load(tmp_path / "m.npz")
    assert meta == {"note": "x"}
    assert m2.config.to_dict() == m.config.to_dict()
    for (k, a), (k2, b) in zip(sorted(m.state_dict().items()), sorted(m2.state_dict().items())):
        assert k == k2
        np.testing.assert_array_equal(a, b)


def test_same_seed_same_init():
    a = Model(ModelConfig.preset("mini", 9), seed=5).state_dict()
    b = Model(ModelConfig.preset("mini", 9), seed=5).state_dict()
    c = Model(ModelConfig.preset("mini", 9), seed=6).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_tied_embeddings_share_weights():
    cfg = ModelConfig.preset("mini", 9)
    cfg.decoder.tie_embeddings = True
    m = Model(cfg)
    assert m.decoder.out_w is None
    names = dict(m.named_parameters())
    assert "decoder.out_w" not in names
