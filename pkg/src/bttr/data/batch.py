"""Samples and bidirectional training batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .vocab import EOS, PAD, SOS


@dataclass
class Sample:
    image: np.ndarray          # [H, W] float32 in [0, 1]
    tokens: list[int]          # y_1 .. y_T, no reserved ids
    name: str = ""

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValueError(f"sample {self.name!r} has an empty token sequence")
        if min(self.tokens) <= EOS:
            raise ValueError(f"sample {self.name!r} contains reserved ids")


@dataclass
class BiBatch:
    images: np.ndarray         # [B, H, W], padded bottom/right with 0
    image_mask: np.ndarray     # [B, H, W] bool, True on real pixels
    l2r_input: np.ndarray      # [B, L]
    l2r_target: np.ndarray
    r2l_input: np.ndarray
    r2l_target: np.ndarray
    token_mask: np.ndarray     # [B, L] bool, True on non-PAD targets
    names: Optional[list[str]] = None

    @property
    def size(self) -> int:
        return self.images.shape[0]

    def inputs(self) -> np.ndarray:
        """Concatenated [l2r; r2l] decoder inputs, shape [2B, L]."""
        return np.concatenate([self.l2r_input, self.r2l_input], axis=0)

    def targets(self) -> np.ndarray:
        return np.concatenate([self.l2r_target, self.r2l_target], axis=0)

    def masks(self) -> np.ndarray:
        return np.concatenate([self.token_mask, self.token_mask], axis=0)


def pad_images(images: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    h = max(im.shape[0] for im in images)
    w = max(im.shape[1] for im in images)
    out = np.zeros((len(images), h, w), dtype=np.float32)
    mask = np.zeros((len(images), h, w), dtype=bool)
    for i, im in enumerate(images):
        out[i, : im.shape[0], : im.shape[1]] = im
        mask[i, : im.shape[0], : im.shape[1]] = True
    return out, mask


def make_bibatch(samples: Sequence[Sample], max_len: Optional[int] = None) -> BiBatch:
    """Build padded L2R/R2L inputs and targets.

    L2R: input ``[SOS, y1..yT]``, target ``[y1..yT, EOS]``.
    R2L: input ``[EOS, yT..y1]``, target ``[yT..y1, SOS]``.
    """
    if not samples:
        raise ValueError("make_bibatch needs at least one sample")
    longest = max(len(s.tokens) for s in samples) + 1
    length = max_len if max_len is not None else longest
    b = len(samples)
    arrays = {k: np.full((b, length), PAD, dtype=np.int64)
              for k in ("l2r_input", "l2r_target", "r2l_input", "r2l_target")}
    token_mask = np.zeros((b, length), dtype=bool)
    for i, s in enumerate(samples):
        t = len(s.tokens)
        if t + 1 > length:
            raise ValueError(f"sample {s.name or i!r} has {t} tokens; needs L_max >= {t + 1}, got {length}")
        y = list(s.tokens)
        arrays["l2r_input"][i, : t + 1] = [SOS] + y
        arrays["l2r_target"][i, : t + 1] = y + [EOS]
        arrays["r2l_input"][i, : t + 1] = [EOS] + y[::-1]
        arrays["r2l_target"][i, : t + 1] = y[::-1] + [SOS]
        token_mask[i, : t + 1] = True
    images, image_mask = pad_images([s.image for s in samples])
    return BiBatch(images, image_mask, token_mask=token_mask,
                   names=[s.name for s in samples], **arrays)


def strip_core(row: Sequence[int]) -> list[int]:
    """Drop PAD and the SOS/EOS framing from an id row."""
    return [int(t) for t in row if t > EOS]
