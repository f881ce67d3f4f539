import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsscrowd.errors import ParameterError
from vsscrowd.head import PointSet
from vsscrowd.metrics import (DatasetLocAccumulator, count_metrics, loc_report_from_counts,
                              localization_metrics)


class TestCounts:
    def test_perfect(self):
        r = count_metrics([(3, 3), (10, 10)])
        assert r.mae == r.rmse == r.mse_paper == 0.0

    def test_single_pair(self):
        r = count_metrics([(5, 3)])
        assert (r.mae, r.rmse, r.mse_paper) == (2.0, 2.0, 2.0)

    def test_tabulated_pairs(self):
        r = count_metrics([(10, 7), (4, 8)])
        assert r.mae == 3.5
        assert r.rmse == math.sqrt(12.5)
        assert r.mse_paper == 2.5

    def test_empty(self):
        with pytest.raises(ParameterError):
            count_metrics([])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 500), st.integers(0, 500)), min_size=1, max_size=40))
    def test_printed_formula_is_rmse_over_root_num(self, pairs):
        r = count_metrics(pairs)
        assert abs(r.mse_paper - r.rmse / math.sqrt(len(pairs))) <= 1e-12 * max(1.0, r.rmse)

    def test_report_text(self):
        lines = count_metrics([(1, 2)]).to_text().splitlines()
        assert all("=" in ln for ln in lines) and "mae=1.000000" in lines


class TestLocalization:
    def test_coincident(self):
        p = PointSet([[4.0, 4.0]])
        for sigma in (0.1, 4, 8):
            r = localization_metrics(p, p, sigma)
            assert (r.tp, r.precision, r.recall, r.f1) == (1, 1.0, 1.0, 1.0)

    def test_displacement_six_eight(self):
        preds, gts = PointSet([[16.0, 18.0]]), PointSet([[10.0, 10.0]])
        assert localization_metrics(preds, gts, 8).tp == 1
        assert localization_metrics(preds, gts, 4).tp == 0
        assert localization_metrics(preds, gts, 5).tp == 0  # strict boundary

    def test_formula_arithmetic(self):
        r = loc_report_from_counts(8, tp=3, n_gt=4, n_pred=5)
        assert (r.precision, r.recall) == (0.6, 0.75)
        assert r.f1 == pytest.approx(2 / 3, abs=1e-15)
        swapped = loc_report_from_counts(8, tp=3, n_gt=4, n_pred=5, convention="paper_text")
        assert (swapped.precision, swapped.recall) == (0.75, 0.6)

    def test_empty_sets(self):
        r = localization_metrics(PointSet.empty(), PointSet([[1.0, 1.0]]), 4)
        assert (r.tp, r.precision, r.recall, r.f1) == (0, 0.0, 0.0, 0.0)

    def test_bad_sigma(self):
        with pytest.raises(ParameterError):
            localization_metrics(PointSet.empty(), PointSet.empty(), 0)

    @pytest.mark.parametrize("seed", range(50))
    def test_monotone_in_sigma(self, seed):
        r = np.random.default_rng(seed)
        gts = PointSet(r.uniform(0, 64, (r.integers(1, 15), 2)))
        preds = PointSet(r.uniform(0, 64, (r.integers(1, 15), 2)))
        tps = [localization_metrics(preds, gts, s).tp for s in (1, 2, 4, 8, 16, 32)]
        assert tps == sorted(tps)
        assert tps[-1] <= min(len(gts), len(preds))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), dx=st.floats(-50, 50), dy=st.floats(-50, 50))
    def test_invariant_to_permutation_and_translation(self, seed, dx, dy):
        r = np.random.default_rng(seed)
        gts, preds = r.uniform(0, 32, (6, 2)), r.uniform(0, 32, (5, 2))
        base = localization_metrics(PointSet(preds), PointSet(gts), 4)
        moved = localization_metrics(PointSet(r.permutation(preds) + [dx, dy]),
                                     PointSet(r.permutation(gts) + [dx, dy]), 4)
        assert moved.tp == base.tp

    @settings(max_examples=100, deadline=None)
    @given(tp=st.integers(0, 20), extra_n=st.integers(0, 20), extra_m=st.integers(0, 20))
    def test_f1_between_precision_and_recall(self, tp, extra_n, extra_m):
        r = loc_report_from_counts(4, tp, tp + extra_n, tp + extra_m)
        if r.precision + r.recall > 0:
            assert min(r.precision, r.recall) - 1e-15 <= r.f1 <= max(r.precision, r.recall) + 1e-15

    def test_dataset_accumulator(self):
        acc = DatasetLocAccumulator(4)
        acc.add(PointSet([[0.0, 0.0], [10.0, 10.0]]), PointSet([[1.0, 0.0]]))
        acc.add(PointSet.empty(), PointSet([[5.0, 5.0]]))
        rep = acc.report()
        assert (rep.tp, rep.n_gt, rep.n_pred) == (1, 2, 2)
        assert rep.precision == 0.5 and rep.recall == 0.5
