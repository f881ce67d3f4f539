"""Neural-network primitives on top of :mod:`vsscrowd.tensor`.

Feature maps are channel-first ``(C, H, W)`` without a batch axis.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError
from .tensor import Tensor, _sigmoid_np, amax, as_tensor, mean, reshape

__all__ = [
    "conv2d",
    "global_pool",
    "upsample_bilinear",
    "depth_to_space",
    "resize_matrix",
    "layer_norm",
    "channel_max",
    "channel_mean",
    "bce_with_logits",
    "smooth_l1",
]


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is ``(C_in, H, W)``, ``weight`` is ``(C_out, C_in, kh, kw)``.
    Output extent is ``floor((H + 2*padding - kh) / stride) + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects (C,H,W) input and 4-d kernel, got {x.shape} and {weight.shape}")
    C, H, W = x.shape
    Co, Ci, kh, kw = weight.shape
    if Ci != C:
        raise DimensionError(f"kernel expects {Ci} input channels, input has {C}")
    if stride < 1 or padding < 0:
        raise ParameterError("stride must be >= 1 and padding >= 0")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {H}x{W}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(C * kh * kw, Ho * Wo)
    wmat = weight.data.reshape(Co, -1)
    out = wmat @ cols
    if bias is not None:
        out = out + bias.data.reshape(Co, 1)
    Hp, Wp = xp.shape[1:]

    def backward(g):
        g2 = g.reshape(Co, Ho * Wo)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gcols = (wmat.T @ g2).reshape(C, kh, kw, Ho, Wo)
        gxp = np.zeros((C, Hp, Wp))
        hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + hs:stride, j:j + ws:stride] += gcols[:, i, j]
        gx = gxp[:, padding:padding + H, padding:padding + W]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1).reshape(bias.shape)

    parents = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    return Tensor.make(out.reshape(Co, Ho, Wo), parents, backward, "conv2d")


def global_pool(x: Tensor, mode: str = "avg") -> Tensor:
    """Per-channel max or mean over all spatial positions: ``(C,H,W) -> (C,1,1)``."""
    C = x.shape[0]
    flat = reshape(x, (C, -1))
    if mode == "max":
        pooled = amax(flat, axis=1, keepdims=True)
    elif mode == "avg":
        pooled = mean(flat, axis=1, keepdims=True)
    else:
        raise ParameterError(f"unknown pooling mode {mode!r}")
    return reshape(pooled, (C, 1, 1))


def channel_max(x: Tensor) -> Tensor:
    """Maximum across channels: ``(C,H,W) -> (1,H,W)``."""
    return amax(x, axis=0, keepdims=True)


def channel_mean(x: Tensor) -> Tensor:
    return mean(x, axis=0, keepdims=True)


@lru_cache(maxsize=256)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear-interpolation matrix ``(n_out, n_in)`` with half-pixel centres.

    Source coordinate of output cell ``o`` is ``(o + 0.5) * n_in / n_out - 0.5``,
    clamped to the valid range (edge replication).
    """
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        w1 = src - i0
        m[o, i0] += 1.0 - w1
        m[o, i1] += w1
    m.setflags(write=False)
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling of ``(C,H,W)`` by an integer factor."""
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"upsample factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if factor == 1:
        return x
    _, H, W = x.shape
    mh = resize_matrix(H, H * factor)
    mw = resize_matrix(W, W * factor)
    out = mh @ x.data @ mw.T
    return Tensor.make(out, (x,), lambda g: (mh.T @ g @ mw,), "upsample")


def depth_to_space(x: Tensor, factor: int) -> Tensor:
    """``(C*f*f, H, W) -> (C, H*f, W*f)``; channel ``c*f*f + a*f + b`` lands at sub-position (a, b)."""
    Cf, H, W = x.shape
    if Cf % (factor * factor):
        raise DimensionError(f"{Cf} channels cannot be rearranged with factor {factor}")
    if factor == 1:
        return x
    C = Cf // (factor * factor)
    return x.reshape(C, factor, factor, H, W).transpose(0, 3, 1, 4, 2).reshape(C, H * factor, W * factor)


def layer_norm(x: Tensor, weight: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    wd = None if weight is None else weight.data
    out = xhat if wd is None else xhat * wd
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gh = g if wd is None else g * wd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        lead = tuple(range(g.ndim - 1))
        if weight is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    parents = [x] + [t for t in (weight, bias) if t is not None]
    return Tensor.make(out, parents, backward, "layer_norm")


def bce_with_logits(logits: Tensor, targets: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """Binary cross-entropy computed stably from logits.

    Without ``weights`` this is the mean over elements; otherwise the
    weighted sum ``sum(w * bce)``.
    """
    z = logits.data
    t = np.asarray(targets, dtype=np.float64)
    w = np.full(z.shape, 1.0 / z.size) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = (w * (np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z))))).sum()
    return Tensor.make(np.asarray(loss), (logits,),
                       lambda g: (g * w * (_sigmoid_np(z) - t),), "bce")


def smooth_l1(diff: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style loss with quadratic zone ``|d| < beta``."""
    d = diff.data
    small = np.abs(d) < beta
    out = np.where(small, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    return Tensor.make(out, (diff,),
                       lambda g: (g * np.where(small, d / beta, np.sign(d)),), "smooth_l1")
