"""Top-down pyramid fusion: F3 -> F2 -> F1 with attention gating and VSS refinement."""
from __future__ import annotations

import numpy as np

from .backbone import FeaturePyramid, VSSBlock
from .config import ModelConfig
from .mhf import MHFAttention, SharedStack, channel_weights, resolution_factor
from .nn import Conv2d, Module
from .ops import channel_max, channel_mean, upsample_bilinear
from .tensor import Tensor, concat, sigmoid


class FgfpFuse(Module):
    """Ablation baseline: spatially reweighted lateral plus channel-reweighted top-down."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.stack = SharedStack(channels, max(1, channels // 4), rng)
        self.spatial = Conv2d(2, 1, 7, rng, padding=3, bias=False)

    def forward(self, lateral: Tensor, top_down: Tensor) -> Tensor:
        both = lateral + top_down
        sa = sigmoid(self.spatial(concat([channel_max(both), channel_mean(both)], axis=0)))
        return lateral * sa + top_down * channel_weights(both, self.stack)


class HS2FPN(Module):
    """Fuses a :class:`FeaturePyramid` into one map at the finest level's resolution.

    Variants: ``hs2fpn`` (gate + VSS refinement), ``hs2fpn_no_mhf`` (VSS
    refinement only), ``fpn_add`` (laterals + upsampled add), ``fgfp_like``
    (reweighted add). Every sub-part draws from its own RNG stream so switching
    variants leaves the shared parameters identical.
    """

    def __init__(self, config: ModelConfig, level_channels, rng: np.random.Generator):
        super().__init__()
        fc = config.fusion
        self.variant = fc.variant
        self.connection = config.mhf.connection
        Lc = fc.lateral_channels
        self.out_channels = Lc
        r_lat, r_vss, r_mhf, r_fgfp = rng.spawn(4)
        self.laterals = [Conv2d(c, Lc, 1, r_lat, bias=False) for c in level_channels]
        self.refine2, self.refine1 = [], []
        if self.variant in ("hs2fpn", "hs2fpn_no_mhf"):
            self.refine2 = [VSSBlock(Lc, config.state_dim, r_vss, config.ssm_expand) for _ in range(fc.vss_depth)]
            self.refine1 = [VSSBlock(Lc, config.state_dim, r_vss, config.ssm_expand) for _ in range(fc.vss_depth)]
        self.mhf2 = self.mhf1 = None
        if self.variant == "hs2fpn":
            c1, c2 = level_channels[0], level_channels[1]
            # the gate is applied after the lateral when fusing "post", so it sees Lc channels
            low2, low1 = (c2, c1) if self.connection == "before" else (Lc, Lc)
            self.mhf2 = MHFAttention(Lc, low2, config.mhf, r_mhf)
            self.mhf1 = MHFAttention(Lc, low1, config.mhf, r_mhf)
        self.fgfp2 = self.fgfp1 = None
        if self.variant == "fgfp_like":
            self.fgfp2 = FgfpFuse(Lc, r_fgfp)
            self.fgfp1 = FgfpFuse(Lc, r_fgfp)

    def _step(self, F_l: Tensor, lateral: Conv2d, high: Tensor, attn, refine, fgfp) -> Tensor:
        factor = resolution_factor(F_l.shape, high.shape)
        top_down = upsample_bilinear(high, factor)
        if fgfp is not None:
            return fgfp(lateral(F_l), top_down)
        if attn is not None and self.connection == "before":
            F_l = F_l * attn.gate(high, factor)
        fused = lateral(F_l) + top_down
        if attn is not None and self.connection == "post":
            fused = fused * attn.gate(high, factor)
        for blk in refine:
            fused = blk(fused)
        return fused

    def forward(self, pyr: FeaturePyramid) -> Tensor:
        lat1, lat2, lat3 = self.laterals
        p3 = lat3(pyr.F3)
        p2 = self._step(pyr.F2, lat2, p3, self.mhf2, self.refine2, self.fgfp2)
        return self._step(pyr.F1, lat1, p2, self.mhf1, self.refine1, self.fgfp1)


def fuse_pyramid(pyr: FeaturePyramid, fpn: HS2FPN) -> Tensor:
    return fpn(pyr)
