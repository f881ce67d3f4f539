"""Reference-grid point head, point sets and the prediction file format."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, InputError, ParameterError
from .nn import Conv2d, Module
from .ops import depth_to_space
from .tensor import Tensor, _sigmoid_np, relu

FEATURE_STRIDE = 4


@dataclass
class PointSet:
    """``points`` is ``(n, 2)`` as (x, y) pixels; predictions also carry ``confidences``."""

    points: np.ndarray
    confidences: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.confidences is not None:
            self.confidences = np.asarray(self.confidences, dtype=np.float64).reshape(-1)
            if len(self.confidences) != len(self.points):
                raise InputError("confidences and points differ in length")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, with_confidence: bool = False) -> "PointSet":
        return cls(np.zeros((0, 2)), np.zeros(0) if with_confidence else None)

    def to_text(self) -> str:
        """Prediction file: ``count=M`` then one ``x y c`` line per point."""
        conf = self.confidences if self.confidences is not None else np.ones(len(self))
        lines = [f"count={len(self)}"]
        lines += [f"{x:.6f} {y:.6f} {c:.6f}" for (x, y), c in zip(self.points, conf)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PointSet":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("count="):
            raise InputError("prediction file must start with a count= header")
        try:
            count = int(lines[0][len("count="):])
            rows = [tuple(float(v) for v in ln.split()) for ln in lines[1:]]
        except ValueError as exc:
            raise InputError(f"malformed prediction file: {exc}") from None
        if len(rows) != count or any(len(r) != 3 for r in rows):
            raise InputError(f"prediction file declares {count} points but holds {len(rows)} x/y/c rows")
        arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
        return cls(arr[:, :2], arr[:, 2])


def make_reference_grid(H: int, W: int, stride: int = 2) -> np.ndarray:
    """Cell-centre reference points ``(ceil(H/s)*ceil(W/s), 2)`` in row-major order."""
    if stride < 1:
        raise ParameterError("grid stride must be >= 1")
    rows, cols = math.ceil(H / stride), math.ceil(W / stride)
    off = stride / 2 - 0.5
    ys, xs = np.meshgrid(stride * np.arange(rows) + off, stride * np.arange(cols) + off, indexing="ij")
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
    # a partial last cell may place its centre past the border
    grid[:, 0] = np.minimum(grid[:, 0], W - 1)
    grid[:, 1] = np.minimum(grid[:, 1], H - 1)
    return grid


class PointHead(Module):
    """Regression (2 offset channels) and classification (1 logit) branches.

    The fused map sits at stride 4 while reference points sit at the grid
    stride, so each branch emits ``f*f`` channel groups (``f = 4 / grid_stride``)
    that a depth-to-space rearrangement turns into one proposal per reference
    point; every sub-position in a feature cell gets its own output weights.
    """

    def __init__(self, in_channels: int, hidden: int, grid_stride: int, rng: np.random.Generator,
                 prior: float = 0.01):
        super().__init__()
        if FEATURE_STRIDE % grid_stride:
            raise ConfigurationError(f"grid stride {grid_stride} must divide feature stride {FEATURE_STRIDE}")
        self.grid_stride = grid_stride
        self.factor = f = FEATURE_STRIDE // grid_stride
        self.reg1 = Conv2d(in_channels, hidden, 3, rng, padding=1)
        self.reg2 = Conv2d(hidden, 2 * f * f, 3, rng, padding=1)
        self.cls1 = Conv2d(in_channels, hidden, 3, rng, padding=1)
        self.cls2 = Conv2d(hidden, f * f, 3, rng, padding=1)
        self.reg2.weight.data[...] = 0.0
        self.cls2.weight.data *= 0.1
        self.cls2.bias.data[...] = -math.log((1 - prior) / prior)

    def forward(self, fused: Tensor, image_size: Tuple[int, int]) -> Tuple[Tensor, Tensor]:
        H, W = image_size
        rows, cols = math.ceil(H / self.grid_stride), math.ceil(W / self.grid_stride)
        f = self.factor
        if (fused.shape[1] * f, fused.shape[2] * f) != (rows, cols):
            raise ConfigurationError(f"head features {fused.shape[1:]} x{f} do not match the "
                                     f"{rows}x{cols} reference grid")
        offsets = depth_to_space(self.reg2(relu(self.reg1(fused))), f).reshape(2, rows * cols).T
        logits = depth_to_space(self.cls2(relu(self.cls1(fused))), f).reshape(rows * cols)
        return offsets, logits


def head_forward(fused: Tensor, image_size, head: PointHead):
    return head(fused, image_size)


def decode_points(offsets, logits, grid: np.ndarray, threshold: float = 0.5,
                  image_size: Optional[Tuple[int, int]] = None) -> PointSet:
    """Keep proposals with ``sigmoid(logit) >= threshold``; coordinates are reference + offset, clamped."""
    if not 0.0 < threshold <= 1.0:
        raise ParameterError(f"threshold must lie in (0, 1], got {threshold}")
    off = offsets.data if isinstance(offsets, Tensor) else np.asarray(offsets, dtype=np.float64)
    lg = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    conf = _sigmoid_np(lg.reshape(-1))
    keep = conf >= threshold
    pts = grid[keep] + off.reshape(-1, 2)[keep]
    if image_size is not None:
        H, W = image_size
        pts[:, 0] = np.clip(pts[:, 0], 0.0, W - 1)
        pts[:, 1] = np.clip(pts[:, 1], 0.0, H - 1)
    return PointSet(pts, conf[keep])
