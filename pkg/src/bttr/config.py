"""Hyperparameter records and the ``key = value`` config-file format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


@dataclass
class EncoderConfig:
    growth_rate: int = 24
    block_depth: int = 16
    n_blocks: int = 3
    compression: float = 0.5
    # stem: 3x3 conv, stride 2, to 2 * growth_rate channels unless overridden
    stem_channels: int = 0
    stem_stride: int = 2
    # pair the row index with H (False) or swap to pair it with W (True)
    pos_swap: bool = False

    def __post_init__(self):
        if not 0.0 < self.compression <= 1.0:
            raise ValueError(f"compression must lie in (0, 1], got {self.compression}")
        if self.n_blocks < 1 or self.block_depth < 1 or self.growth_rate < 1:
            raise ValueError("growth_rate, block_depth and n_blocks must be positive")

    @property
    def stem_out(self) -> int:
        return self.stem_channels or 2 * self.growth_rate

    def channel_trace(self) -> list[int]:
        """Channel count after the stem, each block and each transition."""
        c = self.stem_out
        trace = [c]
        for i in range(self.n_blocks):
            c += self.block_depth * self.growth_rate
            trace.append(c)
            if i < self.n_blocks - 1:
                c = int(self.compression * c)
                trace.append(c)
        return trace

    @property
    def downsample(self) -> int:
        return self.stem_stride * 2 ** (self.n_blocks - 1)


@dataclass
class DecoderConfig:
    d_model: int = 256
    heads: int = 8
    d_ff: int = 1024
    n_layers: int = 3
    dropout: float = 0.3
    max_len: int = 200
    tie_embeddings: bool = False

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


@dataclass
class ModelConfig:
    vocab_size: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    bn_momentum: float = 0.9

    def __post_init__(self):
        if self.decoder.d_model % 4:
            raise ValueError(f"d_model={self.decoder.d_model} must be divisible by 4 for the 2-D image encoding")

    @property
    def d_model(self) -> int:
        return self.decoder.d_model

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        enc = EncoderConfig(**d.pop("encoder", {}))
        dec = DecoderConfig(**d.pop("decoder", {}))
        return cls(encoder=enc, decoder=dec, **d)

    @classmethod
    def preset(cls, name: str, vocab_size: int) -> "ModelConfig":
        if name == "full":
            return cls(vocab_size=vocab_size)
        if name == "toy":
            return cls(vocab_size=vocab_size,
                       encoder=EncoderConfig(growth_rate=12, block_depth=4, n_blocks=3),
                       decoder=DecoderConfig(d_model=128, heads=8, d_ff=512, n_layers=2,
                                             dropout=0.1, max_len=200))
        if name == "mini":
            # smallest useful graph, for gradient checks
            return cls(vocab_size=vocab_size,
                       encoder=EncoderConfig(growth_rate=2, block_depth=1, n_blocks=1),
                       decoder=DecoderConfig(d_model=8, heads=2, d_ff=16, n_layers=1,
                                             dropout=0.0, max_len=16))
        raise KeyError(f"unknown preset {name!r}")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1.0
    rho: float = 0.9
    eps: float = 1e-6
    weight_decay: float = 1e-4
    clip_norm: float = 100.0
    bidirectional: bool = True
    seed: int = 0
    log_every: int = 0


@dataclass
class SearchParams:
    beam: int = 10
    max_len: int = 200
    alpha: float = 1.0
    # +1 adds the reverse log-likelihood (subtracts the loss); 0 disables rescoring
    rescore_weight: float = 1.0

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


# ---------------------------------------------------------------------------
# key = value files
# ---------------------------------------------------------------------------

def _coerce(value: str, kind: Any):
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "bool": bool, "str": str}.get(str(kind), str)
    if kind is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return kind(value.strip())


def config_keys() -> dict[str, tuple[type, str]]:
    """Flat key -> (record type, field name) for every settable knob."""
    keys = {}
    for rec, prefix in ((EncoderConfig, "encoder."), (DecoderConfig, "decoder."),
                        (TrainConfig, "train."), (SearchParams, "search.")):
        for f in fields(rec):
            keys[prefix + f.name] = (rec, f.name)
    keys["model.bn_momentum"] = (ModelConfig, "bn_momentum")
    keys["model.preset"] = (str, "preset")
    return keys


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    known = config_keys()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise KeyError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_kv(path: Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(), str(path))


def apply_overrides(model: ModelConfig | None, train: TrainConfig | None,
                    search: SearchParams | None, values: dict[str, str]) -> None:
    """Write parsed string values into the given records in place."""
    targets = {EncoderConfig: model.encoder if model else None,
               DecoderConfig: model.decoder if model else None,
               ModelConfig: model, TrainConfig: train, SearchParams: search}
    known = config_keys()
    for key, value in values.items():
        rec, name = known[key]
        obj = targets.get(rec)
        if obj is None:
            continue
        kind = {f.name: f.type for f in fields(rec)}[name]
        setattr(obj, name, _coerce(value, kind))
    for obj in targets.values():
        if obj is not None and hasattr(obj, "__post_init__"):
            obj.__post_init__()
