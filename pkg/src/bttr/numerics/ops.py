"""Differentiable operations over :class:`~bttr.numerics.tensor.Tensor`.

Values keep the dtype of their inputs (float32 in normal use, float64 under
gradient checking).  Reductions that feed normalisation statistics are
accumulated in float64.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, make_node


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _pair(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b))
    if a.dtype != b.dtype:
        # constants follow the differentiable operand
        if not b.requires_grad:
            b = Tensor(b.data.astype(a.dtype))
        elif not a.requires_grad:
            a = Tensor(a.data.astype(b.dtype))
    return a, b


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), bw, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return make_node(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    out = make_node(np.where(pos, x.data, 0).astype(x.dtype, copy=False), (x,),
                    lambda g: (g * pos,), "relu")
    # distance to the kink, consulted by gradcheck
    out.meta["kink"] = float(np.min(np.abs(x.data))) if x.data.size else math.inf
    return out


def dropout(x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    """Multiply by a precomputed keep-mask already scaled by 1/(1-p).

    ``mask=None`` is the inference-mode identity.
    """
    if mask is None:
        return x
    mask = mask.astype(x.dtype, copy=False)
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def dropout_mask(rng: np.random.Generator, shape, p: float, dtype=np.float32) -> Optional[np.ndarray]:
    if p <= 0.0:
        return None
    keep = rng.random(shape) >= p
    return keep.astype(dtype) * np.asarray(1.0 / (1.0 - p), dtype=dtype)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        index = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            out.append(g[tuple(index)])
        return tuple(out)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make_node(data, tensors, bw, "concat")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).astype(x.dtype, copy=True),)

    data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64), dtype=x.dtype)
    return make_node(data, (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a @ b`` with numpy broadcasting over leading axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w + b`` over the last axis; ``w`` is [in, out]."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out.reshape(lead + (w.shape[1],)), parents, bw, "linear")


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def _softmax_np(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    # rows with every entry masked yield zeros, not NaN
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis; ``mask`` is an additive array of 0/-inf."""
    z = x.data if mask is None else x.data + mask.astype(x.dtype, copy=False)
    y = _softmax_np(z)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_node(y, (x,), bw, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    m = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return make_node(out, (x,), bw, "log_softmax")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-position ``-log softmax(logits)[target]``; output has the target's shape."""
    targets = np.asarray(targets)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexError(f"cross_entropy: target id outside [0, {vocab})")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    p = e / s
    picked = np.take_along_axis(x, targets[..., None], axis=-1)[..., 0]
    loss = (np.log(s[..., 0]) + m[..., 0] - picked).astype(x.dtype)

    def bw(g):
        d = p * g[..., None]
        np.put_along_axis(d, targets[..., None],
                          np.take_along_axis(d, targets[..., None], axis=-1) - g[..., None], axis=-1)
        return (d.astype(x.dtype, copy=False),)

    return make_node(loss, (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis then apply ``gamma * xhat + beta``."""
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xd - mu) * inv).astype(x.dtype)
    n = x.shape[-1]
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = (g * gamma.data).astype(np.float64)
            gx = (inv / n) * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                              - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
            gx = gx.astype(x.dtype)
        return gx, gg, gb

    return make_node(out.astype(x.dtype, copy=False), (x, gamma, beta), bw, "layernorm")


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.9,
              eps: float = 1e-5, channel_axis: int = 1) -> Tensor:
    """Batch normalisation of a 4-D input over every axis except ``channel_axis``.

    In training mode batch statistics are used and the running buffers are
    updated in place as ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm expects a 4-D input, got {x.shape}")
    cax = channel_axis % 4
    c = x.shape[cax]
    axes = tuple(a for a in range(4) if a != cax)
    shape = tuple(c if a == cax else 1 for a in range(4))
    m = x.size // c
    if training:
        mu = x.data.mean(axis=axes, dtype=np.float64)
        var = np.maximum(np.square(x.data).mean(axis=axes, dtype=np.float64) - mu * mu, 0.0)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean.astype(np.float64), running_var.astype(np.float64)
    inv = (1.0 / np.sqrt(var + eps)).reshape(shape).astype(x.dtype)
    xhat = (x.data - mu.reshape(shape).astype(x.dtype)) * inv
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def bw(g):
        s1 = g.sum(axis=axes, dtype=np.float64)
        s2 = (g * xhat).sum(axis=axes, dtype=np.float64)
        gg = s2.astype(x.dtype) if gamma.requires_grad else None
        gb = s1.astype(x.dtype) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            k = (gamma.data.reshape(shape) * inv)
            if training:
                a = (s1 / m).reshape(shape).astype(x.dtype)
                bcoef = (s2 / m).reshape(shape).astype(x.dtype)
                gx = k * (g - a - xhat * bcoef)
            else:
                gx = g * k
        return gx, gg, gb

    return make_node(out.astype(x.dtype, copy=False), (x, gamma, beta), bw, "batchnorm")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv2d_nhwc(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
                padding: int = 0) -> Tensor:
    """Channel-last 2-D cross-correlation: ``x`` [N, H, W, C_in] -> [N, H', W', C_out].

    ``w`` keeps the [C_out, C_in, kh, kw] layout.  Every padded input pixel is
    multiplied by all kh*kw taps in one matmul; the output is then the sum of
    kh*kw shifted slices of that product.
    """
    n, h, wd, cin = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input {x.shape} has {cin} channels, weight {w.shape} expects {wcin}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape} (padding={padding})")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    taps = kh * kw
    # [C_in, taps * C_out], columns ordered (i, j, o)
    wall = w.data.transpose(1, 2, 3, 0).reshape(cin, taps * cout)
    xd = x.data
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xd
    if taps > 1 and (stride > 1 or cin < cout):
        return _conv_im2col(x, w, b, xp, stride, padding, ho, wo)
    if taps == 1 and stride == 1:
        flat = xp.reshape(-1, cin)
        out = (flat @ wall).reshape(n, ho, wo, cout)
    else:
        if taps == 1:
            xp = np.ascontiguousarray(xp[:, ::stride, ::stride, :])
        flat = xp.reshape(-1, cin)
        z = (flat @ wall).reshape(xp.shape[0], xp.shape[1], xp.shape[2], taps, cout)
        if taps == 1:
            out = z[:, :, :, 0, :]
        else:
            out = np.zeros((n, ho, wo, cout), dtype=z.dtype)
            for t in range(taps):
                i, j = divmod(t, kw)
                out += z[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, t, :]
    if b is not None:
        out = out + b.data

    def bw(g):
        g = np.ascontiguousarray(g)
        gb = g.reshape(-1, cout).sum(axis=0) if b is not None and b.requires_grad else None
        if taps == 1:
            dz = g.reshape(-1, cout)
        else:
            dz5 = np.zeros(xp.shape[:3] + (taps, cout), dtype=g.dtype)
            for t in range(taps):
                i, j = divmod(t, kw)
                dz5[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, t, :] = g
            dz = dz5.reshape(-1, taps * cout)
        gw = None
        if w.requires_grad:
            gw = (flat.T @ dz).reshape(cin, kh, kw, cout).transpose(3, 0, 1, 2)
        gx = None
        if x.requires_grad:
            dxp = (dz @ wall.T).reshape(xp.shape)
            if taps == 1 and stride > 1:
                gx = np.zeros_like(xd)
                gx[:, ::stride, ::stride, :] = dxp
            elif padding:
                gx = dxp[:, padding:padding + h, padding:padding + wd, :]
            else:
                gx = dxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(np.ascontiguousarray(out), parents, bw, "conv2d")


def _conv_im2col(x: Tensor, w: Tensor, b: Optional[Tensor], xp: np.ndarray, stride: int,
                 padding: int, ho: int, wo: int) -> Tensor:
    """Patch-matrix convolution, cheaper when C_in is small or the stride skips pixels."""
    n, h, wd, cin = x.shape
    cout, _, kh, kw = w.shape
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    wmat = w.data.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
    cols = np.concatenate([xp[:, i:i + span_h:stride, j:j + span_w:stride, :]
                           for i in range(kh) for j in range(kw)], axis=-1).reshape(-1, kh * kw * cin)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = np.ascontiguousarray(g).reshape(-1, cout)
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        gw = (cols.T @ g2).reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            d = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros(xp.shape, dtype=g2.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + span_h:stride, j:j + span_w:stride, :] += d[:, :, :, i, j, :]
            gx = dxp[:, padding:padding + h, padding:padding + wd, :] if padding else dxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, bw, "conv2d")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    ``x`` is [C_in, H, W] or [N, C_in, H, W]; ``w`` is [C_out, C_in, kh, kw];
    output extents are floor((H + 2p - kh) / stride) + 1 (likewise W).
    """
    if x.ndim == 3:
        return reshape(conv2d(reshape(x, (1,) + x.shape), w, b, stride, padding),
                       (w.shape[0],) + _conv_out(x.shape[1:], w.shape, stride, padding))
    y = conv2d_nhwc(transpose(x, (0, 2, 3, 1)), w, b, stride, padding)
    return transpose(y, (0, 3, 1, 2))


def _conv_out(hw, wshape, stride, padding):
    return tuple((n + 2 * padding - k) // stride + 1 for n, k in zip(hw, wshape[2:]))


def avgpool2d(x: Tensor, size: int = 2, channels_last: bool = False) -> Tensor:
    """Non-overlapping average pooling with ceil-mode edges.

    Partial windows at the bottom/right edge average only the in-bounds
    entries, so an odd extent H yields ceil(H / size) rows.  Spatial axes
    are the last two, or axes 1 and 2 with ``channels_last``.
    """
    if channels_last:
        n, h, w, c = x.shape
    else:
        *lead, h, w = x.shape
    ho, wo = -(-h // size), -(-w // size)
    ph, pw = ho * size - h, wo * size - w
    rows = np.full(ho, size, dtype=x.dtype)
    cols = np.full(wo, size, dtype=x.dtype)
    rows[-1] -= ph
    cols[-1] -= pw
    count = rows[:, None] * cols[None, :]
    if channels_last:
        xp = np.pad(x.data, [(0, 0), (0, ph), (0, pw), (0, 0)]) if (ph or pw) else x.data
        out = xp.reshape(n, ho, size, wo, size, c).sum(axis=(2, 4)) / count[:, :, None]

        def bw(g):
            gs = g / count[:, :, None]
            full = np.repeat(np.repeat(gs, size, axis=1), size, axis=2)
            return (np.ascontiguousarray(full[:, :h, :w, :]),)
    else:
        xp = np.pad(x.data, [(0, 0)] * len(lead) + [(0, ph), (0, pw)]) if (ph or pw) else x.data
        out = xp.reshape(*lead, ho, size, wo, size).sum(axis=(-3, -1)) / count

        def bw(g):
            gs = g / count
            full = np.repeat(np.repeat(gs, size, axis=-2), size, axis=-1)
            return (np.ascontiguousarray(full[..., :h, :w]),)

    return make_node(out.astype(x.dtype, copy=False), (x,), bw, "avgpool2d")


# ---------------------------------------------------------------------------
# lookup
# ---------------------------------------------------------------------------

def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding: id outside [0, {weight.shape[0]})")

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return make_node(weight.data[ids], (weight,), bw, "embedding")
