"""The full pipeline: backbone -> pyramid fusion -> point head."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from .backbone import Backbone, FeaturePyramid, pad_to_multiple
from .config import ModelConfig
from .fpn import HS2FPN
from .head import PointHead, PointSet, decode_points, make_reference_grid
from .nn import Module
from .tensor import Tensor, no_grad


class CrowdCounter(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        # independent streams keep backbone/head weights fixed when only the fusion variant changes
        r_backbone, r_fusion, r_head = (np.random.default_rng(s)
                                        for s in np.random.SeedSequence(config.seed).spawn(3))
        self.backbone = Backbone(config, r_backbone)
        self.fusion = HS2FPN(config, self.backbone.channels, r_fusion)
        self.head = PointHead(self.fusion.out_channels, config.head_hidden, config.grid_stride, r_head)

    def features(self, image: Tensor) -> FeaturePyramid:
        return self.backbone(image)

    def forward(self, image: Tensor) -> Tuple[Tensor, Tensor]:
        """Raw ``(offsets (M, 2), logits (M,))`` for every reference point."""
        _, H, W = image.shape
        return self.head(self.fusion(self.backbone(image)), (H, W))

    def grid(self, H: int, W: int) -> np.ndarray:
        return make_reference_grid(H, W, self.config.grid_stride)

    def predict(self, image: np.ndarray, threshold: float | None = None) -> PointSet:
        """Decoded points for a ``(3, H, W)`` image; sizes off the stride-16 lattice are zero-padded."""
        _, H, W = image.shape
        padded = pad_to_multiple(image)
        with no_grad():
            offsets, logits = self.forward(Tensor(padded))
        thr = self.config.threshold if threshold is None else threshold
        return decode_points(offsets, logits, self.grid(*padded.shape[1:]), thr, (H, W))
