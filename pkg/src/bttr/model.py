"""Encoder-decoder model, construction and checkpoint round trip."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import ModelConfig
from .decoder import Decoder
from .encoder import Encoder, Memory
from .numerics import Module, load_checkpoint, make_rng, ops, save_checkpoint


class Model(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = make_rng(seed)
        self.encoder = Encoder(config.encoder, config.d_model, rng, config.bn_momentum)
        self.decoder = Decoder(config.decoder, config.vocab_size, rng)

    def encode(self, images, mask=None) -> Memory:
        return self.encoder.encode(images, mask)

    def __call__(self, images, image_mask, input_ids, token_mask=None):
        memory = self.encode(images, image_mask)
        return self.decoder.forward(memory, input_ids, token_mask)

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.state_dict(), self.config.to_json(), meta)

    @classmethod
    def load(cls, path) -> tuple["Model", dict]:
        state, config, meta = load_checkpoint(Path(path))
        model = cls(ModelConfig.from_dict(config))
        model.load_state_dict(state)
        model.eval()
        return model, meta


def tile_memory(memory: Memory, times: int) -> Memory:
    """Repeat a batch Memory ``times`` along the batch axis, keeping the graph."""
    feats = ops.concat([memory.features] * times, axis=0) if times > 1 else memory.features
    return Memory(feats, np.concatenate([memory.key_mask] * times, axis=0), memory.grid)
