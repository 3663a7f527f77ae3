"""DenseNet feature extractor with a 2-D sinusoidal image encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EncoderConfig
from .numerics import Module, Tensor, ShapeError, ones_param, ops, uniform_param, zeros_param


def sinusoid(pos: np.ndarray, d: int) -> np.ndarray:
    """Interleaved sin/cos encoding of (possibly real-valued) positions.

    Entry ``2i`` is ``sin(pos / 10000**(2i/d))`` and entry ``2i+1`` the cosine.
    Returns an array of shape ``pos.shape + (d,)``.
    """
    pos = np.asarray(pos, dtype=np.float64)
    i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos[..., None] / np.power(10000.0, i / d)
    out = np.empty(pos.shape + (d,), dtype=np.float64)
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle[..., : d // 2])
    return out


def image_pos_encoding(h: int, w: int, d_model: int, valid_h: int | None = None,
                       valid_w: int | None = None, swap: bool = False) -> np.ndarray:
    """[h, w, d_model] encoding: row and column sinusoids, each over half the channels.

    Row index ``x`` is normalised by the grid height and column ``y`` by the
    width (``swap`` exchanges the divisors).  ``valid_h``/``valid_w`` give the
    unpadded extents when the grid carries batch padding.
    """
    if d_model % 4:
        raise ValueError(f"d_model={d_model} must be divisible by 4")
    vh = valid_h or h
    vw = valid_w or w
    if swap:
        vh, vw = vw, vh
    xs = np.arange(h) / vh
    ys = np.arange(w) / vw
    half = d_model // 2
    px = sinusoid(xs, half)
    py = sinusoid(ys, half)
    out = np.empty((h, w, d_model))
    out[:, :, :half] = px[:, None, :]
    out[:, :, half:] = py[None, :, :]
    return out


@dataclass
class Memory:
    """Flattened, position-encoded feature grid for a batch of images.

    ``features`` is [B, S, d_model] with S = H' * W'; ``key_mask`` [B, S] marks
    positions that came from real (unpadded) image area.
    """
    features: Tensor
    key_mask: np.ndarray
    grid: tuple[int, int]

    @property
    def batch(self) -> int:
        return self.features.shape[0]

    def select(self, index) -> "Memory":
        """Rows of the batch as a frozen Memory (no graph)."""
        index = np.atleast_1d(index)
        return Memory(Tensor(self.features.data[index]), self.key_mask[index], self.grid)


class Conv2d(Module):
    """Convolution over channel-last feature maps."""

    def __init__(self, rng, cin, cout, k, stride=1, padding=0, bias=False):
        super().__init__()
        self.weight = uniform_param(rng, (cout, cin, k, k), cin * k * k)
        self.bias = zeros_param((cout,)) if bias else None
        self.stride, self.padding = stride, padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d_nhwc(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.9):
        super().__init__()
        self.gamma = ones_param((c,))
        self.beta = zeros_param((c,))
        self.momentum = momentum
        self.register_buffer("running_mean", np.zeros(c, dtype=np.float32))
        self.register_buffer("running_var", np.ones(c, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, channel_axis=-1)


class DenseLayer(Module):
    """BN -> ReLU -> 3x3 conv producing ``growth`` new channels."""

    def __init__(self, rng, cin, growth, momentum):
        super().__init__()
        self.norm = BatchNorm2d(cin, momentum)
        self.conv = Conv2d(rng, cin, growth, 3, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(ops.relu(self.norm(x)))


class DenseBlock(Module):
    def __init__(self, rng, cin, growth, depth, momentum=0.9):
        super().__init__()
        self.layers = [DenseLayer(rng, cin + i * growth, growth, momentum) for i in range(depth)]
        self.out_channels = cin + depth * growth

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = ops.concat([x, layer(x)], axis=-1)
        return x


class Transition(Module):
    """1x1 conv to floor(theta * C) channels, then 2x2 average pooling."""

    def __init__(self, rng, cin, theta):
        super().__init__()
        self.out_channels = int(theta * cin)
        self.conv = Conv2d(rng, cin, self.out_channels, 1)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.avgpool2d(self.conv(x), 2, channels_last=True)


def dense_block(x: Tensor, block: DenseBlock) -> Tensor:
    return block(x)


def transition(x: Tensor, layer: Transition) -> Tensor:
    return layer(x)


class Encoder(Module):
    def __init__(self, config: EncoderConfig, d_model: int, rng: np.random.Generator,
                 bn_momentum: float = 0.9):
        super().__init__()
        self.config = config
        self.d_model = d_model
        c = config.stem_out
        self.stem = Conv2d(rng, 1, c, 3, stride=config.stem_stride, padding=1)
        blocks, transitions = [], []
        for i in range(config.n_blocks):
            block = DenseBlock(rng, c, config.growth_rate, config.block_depth, bn_momentum)
            blocks.append(block)
            c = block.out_channels
            if i < config.n_blocks - 1:
                t = Transition(rng, c, config.compression)
                transitions.append(t)
                c = t.out_channels
        self.blocks = blocks
        self.transitions = transitions
        self.out_channels = c
        self.proj = Conv2d(rng, c, d_model, 1, bias=True)

    def downsample_mask(self, mask: np.ndarray) -> np.ndarray:
        m = mask[..., :: self.config.stem_stride, :: self.config.stem_stride]
        for _ in self.transitions:
            m = m[..., ::2, ::2]
        return m

    def __call__(self, images, mask=None) -> Memory:
        return self.encode(images, mask)

    def encode(self, images, mask=None) -> Memory:
        """Encode [B, H, W] (or [H, W]) bitmaps with an optional validity mask."""
        img = images.data if isinstance(images, Tensor) else np.asarray(images)
        if img.ndim == 2:
            img = img[None]
            mask = None if mask is None else np.asarray(mask)[None]
        b, h, w = img.shape
        mask = np.ones((b, h, w), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        factor = self.config.downsample
        if h < factor or w < factor:
            raise ShapeError(f"image {h}x{w} is smaller than the encoder's downsampling factor {factor}")
        dtype = self.proj.weight.dtype
        x = Tensor(img[..., None].astype(dtype))
        x = self.stem(x)
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i < len(self.transitions):
                x = self.transitions[i](x)
        x = self.proj(x)                                     # [B, H', W', d]
        _, gh, gw, d = x.shape
        grid_mask = self.downsample_mask(mask)
        if grid_mask.shape[1:] != (gh, gw):
            raise ShapeError(f"mask grid {grid_mask.shape[1:]} != feature grid {(gh, gw)}")
        pe = np.empty((b, gh, gw, d), dtype=dtype)
        for n in range(b):
            vh = int(grid_mask[n].any(axis=1).sum()) or gh
            vw = int(grid_mask[n].any(axis=0).sum()) or gw
            pe[n] = image_pos_encoding(gh, gw, d, vh, vw, self.config.pos_swap)
        feats = x.reshape(b, gh * gw, d)
        feats = ops.add(feats, pe.reshape(b, gh * gw, d))
        return Memory(feats, grid_mask.reshape(b, gh * gw), (gh, gw))
