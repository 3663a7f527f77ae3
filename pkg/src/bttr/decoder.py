"""Post-norm transformer decoder over an encoder Memory.

Two evaluation paths share one set of parameters: ``forward`` builds an
autodiff graph over a whole teacher-forced batch, and ``init_state`` /
``step`` run cached incremental decoding in plain numpy for search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import DecoderConfig
from .encoder import Memory, sinusoid
from .numerics import Module, Tensor, ones_param, ops, uniform_param, zeros_param

NEG_INF = -np.inf


def word_pos_encoding(pos, d: int) -> np.ndarray:
    """Sinusoidal encoding of integer token positions, shape ``pos.shape + (d,)``."""
    return sinusoid(np.asarray(pos), d)


def causal_mask(length: int) -> np.ndarray:
    """[L, L] additive mask: 0 on and below the diagonal, -inf above."""
    if length < 1:
        raise ValueError("causal_mask needs L >= 1")
    return np.triu(np.full((length, length), NEG_INF), k=1)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None,
              drop: Optional[np.ndarray] = None) -> Tensor:
    """softmax(q k^T / sqrt(d_k) + mask) v over the last two axes."""
    d_k = q.shape[-1]
    scores = ops.scale(ops.matmul(q, ops.transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(d_k))
    weights = ops.softmax(scores, mask)
    weights = ops.dropout(weights, drop)
    return ops.matmul(weights, v)


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class MultiHeadAttention(Module):
    def __init__(self, rng, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.d_k = d_model // heads
        for name in ("wq", "wk", "wv", "wo"):
            setattr(self, name, uniform_param(rng, (d_model, d_model), d_model))
        for name in ("bq", "bk", "bv", "bo"):
            setattr(self, name, zeros_param((d_model,)))

    def split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return ops.transpose(x.reshape(b, n, self.heads, self.d_k), (0, 2, 1, 3))

    def __call__(self, query: Tensor, key: Tensor, value: Tensor,
                 mask: Optional[np.ndarray] = None, drop: Optional[np.ndarray] = None) -> Tensor:
        return multi_head(query, key, value, mask, self, drop)


def multi_head(query: Tensor, key: Tensor, value: Tensor, mask: Optional[np.ndarray],
               weights: MultiHeadAttention, drop: Optional[np.ndarray] = None) -> Tensor:
    """Project into ``h`` subspaces, attend per head, concatenate, project back.

    Inputs are [B, n, d_model]; ``mask`` broadcasts against [B, h, m, n].
    """
    q = weights.split(ops.linear(query, weights.wq, weights.bq))
    k = weights.split(ops.linear(key, weights.wk, weights.bk))
    v = weights.split(ops.linear(value, weights.wv, weights.bv))
    heads = attention(q, k, v, mask, drop)                       # [B, h, m, d_k]
    b, _, m, _ = heads.shape
    merged = ops.transpose(heads, (0, 2, 1, 3)).reshape(b, m, weights.heads * weights.d_k)
    return ops.linear(merged, weights.wo, weights.bo)


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
        drop: Optional[np.ndarray] = None) -> Tensor:
    """max(0, x W1 + b1) W2 + b2, position-wise."""
    hidden = ops.dropout(ops.relu(ops.linear(x, w1, b1)), drop)
    return ops.linear(hidden, w2, b2)


class LayerNorm(Module):
    def __init__(self, d):
        super().__init__()
        self.gamma = ones_param((d,))
        self.beta = zeros_param((d,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.gamma, self.beta)


class DecoderLayer(Module):
    def __init__(self, rng, cfg: DecoderConfig):
        super().__init__()
        d = cfg.d_model
        self.self_attn = MultiHeadAttention(rng, d, cfg.heads)
        self.cross_attn = MultiHeadAttention(rng, d, cfg.heads)
        self.w1 = uniform_param(rng, (d, cfg.d_ff), d)
        self.b1 = zeros_param((cfg.d_ff,))
        self.w2 = uniform_param(rng, (cfg.d_ff, d), cfg.d_ff)
        self.b2 = zeros_param((d,))
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)
        self.norm3 = LayerNorm(d)


@dataclass
class DecoderState:
    """Per-layer self-attention caches plus precomputed cross-attention keys/values."""
    self_k: list
    self_v: list
    cross_k: list
    cross_v: list
    cross_mask: np.ndarray
    t: int = 0

    def reorder(self, index: np.ndarray) -> "DecoderState":
        index = np.asarray(index)
        pick = lambda arrs: [a[index] for a in arrs]
        return DecoderState(pick(self.self_k), pick(self.self_v), pick(self.cross_k),
                            pick(self.cross_v), self.cross_mask[index], self.t)


def _np_softmax(x: np.ndarray) -> np.ndarray:
    return ops._softmax_np(x)


def _np_layernorm(x, gamma, beta, eps=1e-5):
    xd = x.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    return (((xd - mu) / np.sqrt(var + eps)).astype(x.dtype)) * gamma + beta


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, vocab_size: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        d = cfg.d_model
        self.embed = uniform_param(rng, (vocab_size, d), d)
        self.layers = [DecoderLayer(rng, cfg) for _ in range(cfg.n_layers)]
        self.out_w = None if cfg.tie_embeddings else uniform_param(rng, (d, vocab_size), d)
        self.out_b = zeros_param((vocab_size,))
        # positions 0 .. max_len + 1 cover the start token and the stop step
        self._pe = word_pos_encoding(np.arange(cfg.max_len + 2), d)
        self.dropout_rng = np.random.default_rng(int(rng.integers(2**63)))

    @property
    def max_positions(self) -> int:
        return self._pe.shape[0]

    def _out_weight(self) -> Tensor:
        return ops.transpose(self.embed, (1, 0)) if self.out_w is None else self.out_w

    def _drop(self, shape):
        if not self.training or self.cfg.dropout <= 0:
            return None
        return ops.dropout_mask(self.dropout_rng, shape, self.cfg.dropout, self.embed.dtype)

    # -- teacher-forced graph -------------------------------------------
    def forward(self, memory: Memory, input_ids, token_mask=None) -> Tensor:
        """Logits [B, L, V] for every prefix position in one causal pass."""
        ids = np.asarray(input_ids)
        b, length = ids.shape
        if length > self.max_positions:
            raise ValueError(f"sequence length {length} exceeds positional table ({self.max_positions})")
        if memory.batch != b:
            raise ValueError(f"memory batch {memory.batch} != token batch {b}")
        d = self.cfg.d_model
        dtype = self.embed.dtype
        x = ops.scale(ops.embedding(self.embed, ids), math.sqrt(d))
        x = ops.add(x, self._pe[:length].astype(dtype))
        x = ops.dropout(x, self._drop(x.shape))

        self_mask = causal_mask(length)[None, None]
        if token_mask is not None:
            key_pad = np.where(np.asarray(token_mask, dtype=bool), 0.0, NEG_INF)[:, None, None, :]
            key_pad[..., 0] = 0.0   # the start token is always a valid key
            self_mask = self_mask + key_pad
        cross_mask = np.where(memory.key_mask, 0.0, NEG_INF)[:, None, None, :]
        h = self.cfg.heads
        for layer in self.layers:
            a = layer.self_attn(x, x, x, self_mask, self._drop((b, h, length, length)))
            x = layer.norm1(ops.add(x, ops.dropout(a, self._drop(a.shape))))
            s = memory.features.shape[1]
            c = layer.cross_attn(x, memory.features, memory.features, cross_mask,
                                 self._drop((b, h, length, s)))
            x = layer.norm2(ops.add(x, ops.dropout(c, self._drop(c.shape))))
            f = ffn(x, layer.w1, layer.b1, layer.w2, layer.b2, self._drop((b, length, self.cfg.d_ff)))
            x = layer.norm3(ops.add(x, ops.dropout(f, self._drop(f.shape))))
        return ops.linear(x, self._out_weight(), self.out_b)

    __call__ = forward

    # -- incremental numpy path -----------------------------------------
    def init_state(self, memory: Memory) -> DecoderState:
        feats = memory.features.data
        b, s, d = feats.shape
        h, dk = self.cfg.heads, self.cfg.d_k
        ck, cv = [], []
        for layer in self.layers:
            att = layer.cross_attn
            ck.append((feats @ att.wk.data + att.bk.data).reshape(b, s, h, dk).transpose(0, 2, 1, 3))
            cv.append((feats @ att.wv.data + att.bv.data).reshape(b, s, h, dk).transpose(0, 2, 1, 3))
        empty = np.zeros((b, h, 0, dk), dtype=feats.dtype)
        n = len(self.layers)
        cross_mask = np.where(memory.key_mask, 0.0, NEG_INF)[:, None, None, :].astype(feats.dtype)
        return DecoderState([empty] * n, [empty] * n, ck, cv, cross_mask, 0)

    def step(self, state: DecoderState, token_ids) -> tuple[np.ndarray, DecoderState]:
        """Feed one token per batch row; return next-token logits [B, V]."""
        ids = np.asarray(token_ids).reshape(-1)
        t = state.t
        if t >= self.max_positions:
            raise ValueError(f"prefix length {t + 1} exceeds positional table ({self.max_positions})")
        d, h, dk = self.cfg.d_model, self.cfg.heads, self.cfg.d_k
        b = ids.shape[0]
        dtype = self.embed.dtype
        x = (self.embed.data[ids] * dtype.type(math.sqrt(d)) + self._pe[t].astype(dtype))[:, None, :]
        new_k, new_v = [], []
        scale = dtype.type(1.0 / math.sqrt(dk))
        for i, layer in enumerate(self.layers):
            att = layer.self_attn
            q = (x @ att.wq.data + att.bq.data).reshape(b, 1, h, dk).transpose(0, 2, 1, 3)
            k = (x @ att.wk.data + att.bk.data).reshape(b, 1, h, dk).transpose(0, 2, 1, 3)
            v = (x @ att.wv.data + att.bv.data).reshape(b, 1, h, dk).transpose(0, 2, 1, 3)
            ks = np.concatenate([state.self_k[i], k], axis=2)
            vs = np.concatenate([state.self_v[i], v], axis=2)
            new_k.append(ks)
            new_v.append(vs)
            w = _np_softmax((q @ np.swapaxes(ks, -1, -2)) * scale)
            a = (w @ vs).transpose(0, 2, 1, 3).reshape(b, 1, d) @ att.wo.data + att.bo.data
            x = _np_layernorm(x + a, layer.norm1.gamma.data, layer.norm1.beta.data)

            att = layer.cross_attn
            q = (x @ att.wq.data + att.bq.data).reshape(b, 1, h, dk).transpose(0, 2, 1, 3)
            w = _np_softmax((q @ np.swapaxes(state.cross_k[i], -1, -2)) * scale + state.cross_mask)
            c = (w @ state.cross_v[i]).transpose(0, 2, 1, 3).reshape(b, 1, d) @ att.wo.data + att.bo.data
            x = _np_layernorm(x + c, layer.norm2.gamma.data, layer.norm2.beta.data)

            f = np.maximum(x @ layer.w1.data + layer.b1.data, 0) @ layer.w2.data + layer.b2.data
            x = _np_layernorm(x + f, layer.norm3.gamma.data, layer.norm3.beta.data)
        out_w = self.embed.data.T if self.out_w is None else self.out_w.data
        logits = (x[:, 0, :] @ out_w + self.out_b.data)
        return logits, DecoderState(new_k, new_v, state.cross_k, state.cross_v, state.cross_mask, t + 1)


def decode_step(decoder: Decoder, memory: Memory, prefix_ids, state: Optional[DecoderState] = None):
    """Next-token logits for ``prefix_ids`` (one sequence per memory row).

    Tokens already absorbed by ``state`` are skipped, so repeated calls with a
    growing prefix cost one step each.
    """
    prefix = np.atleast_2d(np.asarray(prefix_ids))
    if prefix.shape[1] < 1:
        raise ValueError("prefix must contain at least the start token")
    if prefix.shape[1] > decoder.max_positions:
        raise ValueError(f"prefix length {prefix.shape[1]} exceeds positional table ({decoder.max_positions})")
    if state is None:
        state = decoder.init_state(memory)
    logits = None
    for t in range(state.t, prefix.shape[1]):
        logits, state = decoder.step(state, prefix[:, t])
    if logits is None:
        raise ValueError("state already covers the whole prefix")
    return logits, state
