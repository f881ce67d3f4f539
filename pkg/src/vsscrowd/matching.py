"""Minimum-cost bipartite matching and the three-task training loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .config import TtcWeights
from .errors import InputError
from .head import PointSet
from .ops import bce_with_logits, smooth_l1
from .tensor import Tensor, _sigmoid_np, as_tensor, sigmoid, tabs

__all__ = ["MatchResult", "TtcWeights", "build_cost", "hungarian_match", "ttc_loss"]


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int]]
    unmatched_preds: List[int]
    total_cost: float
    unmatched_gts: List[int] = field(default_factory=list)

    @property
    def pred_indices(self) -> np.ndarray:
        return np.array([p for p, _ in self.pairs], dtype=np.int64)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=np.int64)


def _assign_rows(cost: np.ndarray) -> np.ndarray:
    """Shortest-augmenting-path Hungarian method for ``n <= m``; returns column per row."""
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j] = 1-based row holding column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row


def hungarian_match(cost) -> MatchResult:
    """Minimum-total-cost injective assignment of ``min(R, C)`` row/column pairs.

    Rows are predictions, columns are annotations.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or 0 in cost.shape:
        raise InputError(f"cost must be a non-empty 2-d matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise InputError("cost matrix contains NaN or infinite entries")
    R, C = cost.shape
    if R <= C:
        cols = _assign_rows(cost)
        pairs = [(r, int(c)) for r, c in enumerate(cols)]
    else:
        rows = _assign_rows(cost.T)
        pairs = sorted((int(r), c) for c, r in enumerate(rows))
    matched_p = {p for p, _ in pairs}
    matched_g = {g for _, g in pairs}
    total = float(sum(cost[p, g] for p, g in pairs))
    return MatchResult(
        pairs=pairs,
        unmatched_preds=[j for j in range(R) if j not in matched_p],
        total_cost=total,
        unmatched_gts=[i for i in range(C) if i not in matched_g],
    )


def build_cost(pred_points: np.ndarray, pred_conf: np.ndarray, gt_points: np.ndarray,
               tau: float = 0.0) -> np.ndarray:
    """``cost[j, i] = ||pred_j - gt_i|| - tau * conf_j``."""
    pred_points = np.asarray(pred_points, dtype=np.float64).reshape(-1, 2)
    gt_points = np.asarray(gt_points, dtype=np.float64).reshape(-1, 2)
    dist = np.sqrt(((pred_points[:, None, :] - gt_points[None, :, :]) ** 2).sum(axis=-1))
    if tau:
        dist = dist - tau * np.asarray(pred_conf, dtype=np.float64).reshape(-1, 1)
    return dist


def ttc_loss(logits: Tensor, offsets: Tensor, grid: np.ndarray, gts: PointSet,
             weights: TtcWeights = TtcWeights(), tau: float = 0.0):
    """Classification + localisation + count-consistency loss over all grid proposals.

    Returns ``(loss, breakdown, match)``; ``match`` is ``None`` for empty scenes.
    """
    logits, offsets = as_tensor(logits), as_tensor(offsets)
    pred = offsets + grid
    M, N = len(grid), len(gts)
    targets = np.zeros(M)
    match = None
    if N:
        conf = _sigmoid_np(logits.data)
        match = hungarian_match(build_cost(pred.data, conf, gts.points, tau))
        targets[match.pred_indices] = 1.0
    if weights.cls_balance == "balanced" and N:
        pos = np.zeros(M)
        pos[match.pred_indices] = 1.0
        l_cls = bce_with_logits(logits, targets, pos / pos.sum() + (1 - pos) / max(M - pos.sum(), 1))
    else:
        l_cls = bce_with_logits(logits, targets)
    total = l_cls * weights.cls
    breakdown: Dict[str, float] = {"cls": l_cls.item(), "loc": 0.0, "cnt": 0.0}
    if N:
        diff = pred[match.pred_indices] - gts.points[match.gt_indices]
        l_loc = smooth_l1(diff).sum() * (1.0 / len(match.pairs))
        l_cnt = tabs(sigmoid(logits).sum() - float(N))
        total = total + l_loc * weights.loc + l_cnt * weights.cnt
        breakdown["loc"] = l_loc.item()
        breakdown["cnt"] = l_cnt.item()
    breakdown["total"] = total.item()
    return total, breakdown, match
