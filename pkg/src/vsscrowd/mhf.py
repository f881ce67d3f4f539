"""Multi-head high-level feature attention.

A high-level map ``F_h`` is turned into a bounded spatial gate that multiplies
a finer low-level map ``F_l``:

* channel enhancement: ``W = sigmoid(S(maxpool F_h) + S(avgpool F_h))``,
  ``F_out1 = W * F_h`` with ``S`` a shared 1x1 bottleneck stack;
* multi-head spatial enhancement: contiguous channel groups, each reduced to
  its cross-channel max and mean maps and filtered to one map ``G_i``;
  ``F_out2`` concatenates the ``G_i``;
* high-level channel enhancement: channel-reweight ``F_out2`` the same way,
  fuse the heads into one map, bound it with a sigmoid and upsample it to the
  low-level resolution (``F_out3``);
* ``F_out4 = F_l * F_out3``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .config import MhfConfig
from .errors import ConfigurationError, DimensionError
from .nn import Conv2d, Module
from .ops import channel_max, channel_mean, global_pool, upsample_bilinear
from .tensor import Tensor, concat, relu, sigmoid


class SharedStack(Module):
    """1x1 conv -> ReLU -> 1x1 conv bottleneck shared by the max and avg branches."""

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.reduce = Conv2d(channels, hidden, 1, rng, bias=False)
        self.expand = Conv2d(hidden, channels, 1, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return self.expand(relu(self.reduce(x)))


def channel_weights(x: Tensor, stack: SharedStack) -> Tensor:
    """``sigmoid(S(maxpool x) + S(avgpool x))`` with shape ``(C, 1, 1)``."""
    return sigmoid(stack(global_pool(x, "max")) + stack(global_pool(x, "avg")))


def cem(F_h: Tensor, stack: SharedStack):
    """Channel enhancement. Returns ``(W, F_out1)``."""
    W = channel_weights(F_h, stack)
    return W, F_h * W


def split_heads(x: Tensor, num_heads: int) -> List[Tensor]:
    C = x.shape[0]
    if C % num_heads:
        raise ConfigurationError(f"{C} channels cannot be split into {num_heads} heads")
    g = C // num_heads
    return [x[i * g:(i + 1) * g] for i in range(num_heads)]


def msem(F_out1: Tensor, convs) -> Tensor:
    """Multi-head spatial enhancement: one filtered max/mean map per channel group."""
    groups = split_heads(F_out1, len(convs))
    maps = [conv(concat([channel_max(g), channel_mean(g)], axis=0)) for g, conv in zip(groups, convs)]
    return concat(maps, axis=0)


def hcem(F_out2: Tensor, stack: SharedStack, fuse: Conv2d, factor: int, bounded: bool = True) -> Tensor:
    """Channel-reweight the head maps, fuse them, bound and upsample by ``factor``."""
    enhanced = F_out2 * channel_weights(F_out2, stack)
    fused = fuse(enhanced)
    if bounded:
        fused = sigmoid(fused)
    return upsample_bilinear(fused, factor)


def resolution_factor(low_shape, high_shape) -> int:
    _, Hl, Wl = low_shape
    _, Hh, Wh = high_shape
    if Hl % Hh or Wl % Wh or Hl // Hh != Wl // Wh:
        raise DimensionError(f"low-level size {Hl}x{Wl} is not an integer multiple of {Hh}x{Wh}")
    return Hl // Hh


@dataclass
class MhfIntermediates:
    F_m: Tensor
    F_a: Tensor
    W: Tensor
    F_out1: Tensor
    groups: list
    G: list
    F_out2: Optional[Tensor]
    F_out3: Tensor
    F_out4: Optional[Tensor] = None


class MHFAttention(Module):
    """Gate generator for one top-down fusion step.

    ``high_channels`` is the channel count of ``F_h``; ``low_channels`` only
    matters when ``cfg.gate_mode == "conv"`` (per-channel gate instead of a
    broadcast single map).
    """

    def __init__(self, high_channels: int, low_channels: int, cfg: MhfConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        if high_channels % cfg.reduction:
            raise ConfigurationError(f"{high_channels} channels not divisible by reduction {cfg.reduction}")
        if high_channels % cfg.num_heads:
            raise ConfigurationError(f"{high_channels} channels not divisible by {cfg.num_heads} heads")
        self.cfg = cfg
        self.cem_stack = SharedStack(high_channels, high_channels // cfg.reduction, rng)
        k = cfg.spatial_kernel
        self.head_convs = [Conv2d(2, 1, k, rng, padding=(k - 1) // 2, bias=False) for _ in range(cfg.num_heads)]
        h = cfg.num_heads
        self.hcem_stack = SharedStack(h, max(1, h // cfg.reduction), rng)
        self.fuse = Conv2d(h, low_channels if cfg.gate_mode == "conv" else 1, 1, rng)

    def gate(self, F_h: Tensor, factor: int) -> Tensor:
        """``F_out3``: values in (0, 1), at ``factor`` times the resolution of ``F_h``."""
        return self.intermediates(F_h, factor).F_out3

    def intermediates(self, F_h: Tensor, factor: int) -> MhfIntermediates:
        cfg = self.cfg
        F_m, F_a = global_pool(F_h, "max"), global_pool(F_h, "avg")
        W, F_out1 = cem(F_h, self.cem_stack)
        groups, G, F_out2 = [], [], None
        if cfg.stages == "cem":
            F_out3 = upsample_bilinear(sigmoid(channel_mean(F_out1)), factor)
        else:
            groups = split_heads(F_out1, cfg.num_heads)
            G = [conv(concat([channel_max(g), channel_mean(g)], axis=0))
                 for g, conv in zip(groups, self.head_convs)]
            F_out2 = concat(G, axis=0)
            if cfg.stages == "cem+msem":
                F_out3 = upsample_bilinear(sigmoid(channel_mean(F_out2)), factor)
            else:
                F_out3 = hcem(F_out2, self.hcem_stack, self.fuse, factor, cfg.hcem_sigmoid)
        return MhfIntermediates(F_m, F_a, W, F_out1, groups, G, F_out2, F_out3)

    def forward(self, F_l: Tensor, F_h: Tensor) -> Tensor:
        return mhf_enhance(F_l, F_h, self)


def mhf_enhance(F_l: Tensor, F_h: Tensor, attn: MHFAttention) -> Tensor:
    """``F_out4 = F_l * F_out3`` with the gate broadcast over the low-level channels."""
    factor = resolution_factor(F_l.shape, F_h.shape)
    return F_l * attn.gate(F_h, factor)
