"""Four-way cross-scan VSS blocks and the three-stage feature extractor."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import ModelConfig
from .errors import DimensionError, InputError
from .nn import Conv2d, LayerNorm, Linear, Module, channel_layer_norm
from .scan import ScanParams, selective_scan
from .tensor import Tensor, silu, split

ROUTES = 4


@lru_cache(maxsize=64)
def route_indices(H: int, W: int) -> np.ndarray:
    """Token orders ``(4, H*W)``: row-major, reversed row-major, column-major, reversed column-major."""
    grid = np.arange(H * W).reshape(H, W)
    row, col = grid.ravel(), grid.T.ravel()
    idx = np.stack([row, row[::-1], col, col[::-1]])
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=64)
def _inverse_routes(H: int, W: int) -> np.ndarray:
    inv = np.argsort(route_indices(H, W), axis=1)
    inv.setflags(write=False)
    return inv


def _gather(data: np.ndarray, H: int, W: int) -> np.ndarray:
    return data[route_indices(H, W)]


def _scatter_sum(data: np.ndarray, H: int, W: int) -> np.ndarray:
    inv = _inverse_routes(H, W)
    return sum(data[k][inv[k]] for k in range(data.shape[0]))


def scan_tokens(tokens: Tensor, H: int, W: int) -> Tensor:
    """``(H*W, C)`` tokens in row-major order -> ``(4, H*W, C)`` route sequences."""
    if tokens.shape[0] != H * W:
        raise DimensionError(f"expected {H * W} tokens, got {tokens.shape[0]}")
    return Tensor.make(_gather(tokens.data, H, W), (tokens,),
                       lambda g: (_scatter_sum(g, H, W),), "cross_scan")


def merge_tokens(seqs: Tensor, H: int, W: int) -> Tensor:
    """Inverse of :func:`scan_tokens`: scatter every route back and sum the four."""
    if seqs.ndim != 3 or seqs.shape[0] != ROUTES or seqs.shape[1] != H * W:
        raise DimensionError(f"expected (4, {H * W}, C) route sequences, got {seqs.shape}")
    return Tensor.make(_scatter_sum(seqs.data, H, W), (seqs,),
                       lambda g: (_gather(g, H, W),), "cross_merge")


def cross_scan(x: Tensor) -> Tensor:
    """``(C, H, W)`` map -> four length-``H*W`` sequences of C-vectors, shape ``(4, H*W, C)``."""
    C, H, W = x.shape
    return scan_tokens(x.reshape(C, H * W).T, H, W)


def cross_merge(seqs: Tensor, H: int, W: int) -> Tensor:
    """Four ``(H*W, C)`` route sequences -> summed ``(C, H, W)`` map."""
    merged = merge_tokens(seqs, H, W)
    return merged.T.reshape(merged.shape[1], H, W)


class VSSBlock(Module):
    """Residual block: norm, gated projection, four-route selective scan, projection back."""

    def __init__(self, dim: int, state_dim: int, rng: np.random.Generator, expand: int = 1,
                 out_scale: float = 0.1):
        super().__init__()
        inner = dim * expand
        self.dim, self.inner = dim, inner
        self.norm = LayerNorm(dim)
        self.in_proj = Linear(dim, 2 * inner, rng)
        self.ssm = ScanParams(inner, state_dim, rng, routes=ROUTES)
        self.out_norm = LayerNorm(inner)
        self.out_proj = Linear(inner, dim, rng)
        self.out_proj.weight.data *= out_scale

    def forward(self, x: Tensor) -> Tensor:
        C, H, W = x.shape
        if C != self.dim:
            raise DimensionError(f"VSS block built for {self.dim} channels, got {C}")
        tokens = x.reshape(C, H * W).T
        xs, z = split(self.in_proj(self.norm(tokens)), (self.inner, self.inner), axis=-1)
        y = selective_scan(scan_tokens(silu(xs), H, W), self.ssm)
        y = self.out_norm(merge_tokens(y, H, W)) * silu(z)
        out = tokens + self.out_proj(y)
        return out.T.reshape(C, H, W)


@dataclass
class FeaturePyramid:
    F1: Tensor
    F2: Tensor
    F3: Tensor

    def levels(self):
        return (self.F1, self.F2, self.F3)

    def shapes(self):
        return tuple(t.shape for t in self.levels())


class Backbone(Module):
    """Stride-4 patch embedding, three VSS stages with stride-2 downsampling between them."""

    STRIDE = 16

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        C, N, e = config.base_channels, config.state_dim, config.ssm_expand
        d1, d2, d3 = config.stage_depths
        self.channels = (C, 2 * C, 4 * C)
        self.patch_embed = Conv2d(3, C, 4, rng, stride=4)
        self.embed_norm = LayerNorm(C)
        self.stage1 = [VSSBlock(C, N, rng, e) for _ in range(d1)]
        self.down1 = Conv2d(C, 2 * C, 2, rng, stride=2)
        self.down1_norm = LayerNorm(2 * C)
        self.stage2 = [VSSBlock(2 * C, N, rng, e) for _ in range(d2)]
        self.down2 = Conv2d(2 * C, 4 * C, 2, rng, stride=2)
        self.down2_norm = LayerNorm(4 * C)
        self.stage3 = [VSSBlock(4 * C, N, rng, e) for _ in range(d3)]

    def forward(self, image: Tensor) -> FeaturePyramid:
        if image.ndim != 3 or image.shape[0] != 3:
            raise InputError(f"expected a (3, H, W) image, got {image.shape}")
        _, H, W = image.shape
        if H % self.STRIDE or W % self.STRIDE:
            raise InputError(f"image size {H}x{W} is not divisible by {self.STRIDE}; pad it first")
        x = channel_layer_norm(self.embed_norm, self.patch_embed(image))
        for blk in self.stage1:
            x = blk(x)
        f1 = x
        x = channel_layer_norm(self.down1_norm, self.down1(x))
        for blk in self.stage2:
            x = blk(x)
        f2 = x
        x = channel_layer_norm(self.down2_norm, self.down2(x))
        for blk in self.stage3:
            x = blk(x)
        return FeaturePyramid(f1, f2, x)


def backbone_forward(image: Tensor, backbone: Backbone) -> FeaturePyramid:
    return backbone(image)


def pad_to_multiple(image: np.ndarray, multiple: int = Backbone.STRIDE) -> np.ndarray:
    """Zero-pad a ``(C, H, W)`` array on the bottom/right to the next multiple."""
    _, H, W = image.shape
    ph, pw = (-H) % multiple, (-W) % multiple
    if ph == 0 and pw == 0:
        return image
    return np.pad(image, ((0, 0), (0, ph), (0, pw)))


__all__ = [
    "Backbone", "FeaturePyramid", "VSSBlock", "backbone_forward", "cross_merge", "cross_scan",
    "merge_tokens", "pad_to_multiple", "route_indices", "scan_tokens",
]
