"""Counting (MAE / MSE) and localisation (precision / recall / F1) metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Tuple

import numpy as np

from .errors import ParameterError
from .head import PointSet
from .matching import build_cost, hungarian_match


@dataclass
class CountReport:
    pairs: List[Tuple[float, float]]
    mae: float
    mse_paper: float
    rmse: float

    def to_text(self) -> str:
        return f"num_images={len(self.pairs)}\nmae={self.mae:.6f}\nrmse={self.rmse:.6f}\nmse_paper={self.mse_paper:.6f}\n"


@dataclass
class LocReport:
    sigma: float
    tp: int
    n_gt: int
    n_pred: int
    precision: float
    recall: float
    f1: float
    convention: str = "standard"

    def to_text(self) -> str:
        tag = f"sigma{self.sigma:g}.{self.convention}"
        return (f"{tag}.tp={self.tp}\n{tag}.precision={self.precision:.6f}\n"
                f"{tag}.recall={self.recall:.6f}\n{tag}.f1={self.f1:.6f}\n")


def count_metrics(pairs: Iterable[Tuple[float, float]]) -> CountReport:
    """``pairs`` are per-image ``(annotated N_j, predicted M_j)`` counts.

    ``mse_paper`` keeps the 1/NUM factor outside the square root;
    ``rmse`` is the conventional root of the mean squared error.
    """
    pairs = [(float(n), float(m)) for n, m in pairs]
    if not pairs:
        raise ParameterError("count_metrics needs at least one image")
    err = np.array([n - m for n, m in pairs])
    num = len(pairs)
    sq = float((err ** 2).sum())
    return CountReport(pairs, mae=float(np.abs(err).mean()), mse_paper=math.sqrt(sq) / num,
                       rmse=math.sqrt(sq / num))


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def match_true_positives(preds: PointSet, gts: PointSet, sigma: float) -> int:
    if len(preds) == 0 or len(gts) == 0:
        return 0
    match = hungarian_match(build_cost(preds.points, None, gts.points))
    d = preds.points[match.pred_indices] - gts.points[match.gt_indices]
    dist = np.sqrt((d ** 2).sum(axis=1)) / 2.0
    return int((dist < sigma).sum())


def localization_metrics(preds: PointSet, gts: PointSet, sigma: float,
                         convention: str = "standard") -> LocReport:
    """Matched pair counts as TP when ``sqrt(dw^2 + dh^2) / 2 < sigma``.

    ``standard``: P = TP/M (predicted), R = TP/N (annotated).
    ``paper_text``: the swapped assignment P = TP/N, R = TP/M.
    """
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    tp = match_true_positives(preds, gts, sigma)
    return loc_report_from_counts(sigma, tp, len(gts), len(preds), convention)


def loc_report_from_counts(sigma: float, tp: int, n_gt: int, n_pred: int,
                           convention: str = "standard") -> LocReport:
    by_pred = tp / n_pred if n_pred else 0.0
    by_gt = tp / n_gt if n_gt else 0.0
    if convention == "standard":
        p, r = by_pred, by_gt
    elif convention == "paper_text":
        p, r = by_gt, by_pred
    else:
        raise ParameterError(f"unknown convention {convention!r}")
    return LocReport(sigma, tp, n_gt, n_pred, p, r, _f1(p, r), convention)


@dataclass
class DatasetLocAccumulator:
    """Sums TP / N / M across images, then reports dataset-level P/R/F1."""

    sigma: float
    tp: int = 0
    n_gt: int = 0
    n_pred: int = 0
    per_image: list = field(default_factory=list)

    def add(self, preds: PointSet, gts: PointSet) -> None:
        tp = match_true_positives(preds, gts, self.sigma)
        self.tp += tp
        self.n_gt += len(gts)
        self.n_pred += len(preds)
        self.per_image.append(tp)

    def report(self, convention: str = "standard") -> LocReport:
        return loc_report_from_counts(self.sigma, self.tp, self.n_gt, self.n_pred, convention)
