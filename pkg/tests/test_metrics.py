import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mambaseg.errors import InvalidMask, ShapeMismatch
from mambaseg.metrics import (ConfusionCounts, confusion, metrics_from_counts,
                              read_report, summarize, write_report)
from mambaseg.objective import dice_loss
from mambaseg.rng import Xoshiro256
from mambaseg.tensor import from_array


def brute_force_counts(pred, gt, threshold=0.5):
    tp = fp = fn = tn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p = pred[i, j] >= threshold
            t = gt[i, j] == 1
            if p and t:
                tp += 1
            elif p and not t:
                fp += 1
            elif not p and t:
                fn += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def random_pair(seed, side=10):
    rng = Xoshiro256(seed, "metrics")
    pred = np.array([[rng.uniform() for _ in range(side)] for _ in range(side)])
    gt = np.array([[1.0 if rng.uniform() > 0.5 else 0.0 for _ in range(side)]
                   for _ in range(side)])
    return pred, gt


class TestConfusion:
    def test_perfect_match(self):
        _, gt = random_pair(1)
        c = confusion(gt, gt)
        assert c.fp == 0 and c.fn == 0
        assert c.tp + c.tn == gt.size

    def test_all_positive_prediction(self):
        gt = np.zeros((5, 5))
        c = confusion(np.ones((5, 5)), gt)
        assert c.fp == 25 and c.tp == 0

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_brute_force(self, seed):
        pred, gt = random_pair(seed)
        got = confusion(pred, gt)
        assert got == brute_force_counts(pred, gt)

    def test_threshold_rule_ge(self):
        c = confusion(np.array([[0.5]]), np.array([[1.0]]))
        assert c.tp == 1

    def test_non_binary_gt(self):
        with pytest.raises(InvalidMask):
            confusion(np.ones((2, 2)), np.full((2, 2), 0.5))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            confusion(np.ones((2, 2)), np.ones((3, 2)))

    def test_total_invariant(self):
        pred, gt = random_pair(5)
        assert confusion(pred, gt).total == gt.size


class TestMetrics:
    def test_worked_row(self):
        m = metrics_from_counts(ConfusionCounts(tp=8, fp=2, fn=2, tn=88))
        assert m["dsc"] == pytest.approx(0.8)
        assert m["acc"] == pytest.approx(0.96)
        assert m["se"] == pytest.approx(0.8)
        assert m["sp"] == pytest.approx(88 / 90)

    def test_all_correct(self):
        m = metrics_from_counts(ConfusionCounts(tp=10, fp=0, fn=0, tn=90))
        assert all(v == 1.0 for v in m.values())

    def test_degenerate_denominators(self):
        assert metrics_from_counts(ConfusionCounts(0, 0, 0, 10))["se"] == 1.0
        assert metrics_from_counts(ConfusionCounts(10, 0, 0, 0))["sp"] == 1.0
        assert metrics_from_counts(ConfusionCounts(0, 5, 0, 5))["sp"] == 0.5

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_bounds(self, seed):
        pred, gt = random_pair(seed, side=6)
        m = metrics_from_counts(confusion(pred, gt))
        assert all(0.0 <= v <= 1.0 for v in m.values())

    def test_dsc_equals_dice_loss_complement(self):
        pred, gt = random_pair(7)
        binary = (pred >= 0.5).astype(np.float64)
        dsc = metrics_from_counts(confusion(pred, gt))["dsc"]
        dl = dice_loss(from_array(binary, dtype="f64"),
                       from_array(gt, dtype="f64"), smooth=1e-12).item()
        assert abs(dsc - (1.0 - dl)) <= 1e-9

    def test_swap_symmetry_through_counts(self):
        pred, gt = random_pair(8)
        binary = (pred >= 0.5).astype(np.float64)
        a = confusion(binary, gt)
        b = confusion(gt, binary)
        assert (a.tp, a.tn) == (b.tp, b.tn)
        assert (a.fp, a.fn) == (b.fn, b.fp)
        ma, mb = metrics_from_counts(a), metrics_from_counts(b)
        assert ma["dsc"] == pytest.approx(mb["dsc"])
        assert ma["acc"] == pytest.approx(mb["acc"])

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=20, deadline=None)
    def test_counts_merge_by_addition(self, seed):
        p1, g1 = random_pair(seed, side=5)
        p2, g2 = random_pair(seed + 1, side=5)
        merged = confusion(p1, g1).merged(confusion(p2, g2))
        joint = confusion(np.concatenate([p1, p2]), np.concatenate([g1, g2]))
        assert merged == joint


class TestReport:
    def test_write_read_round_trip(self, tmp_path):
        rows = [("a", {"dsc": 0.9, "acc": 0.95, "se": 0.8, "sp": 0.99}),
                ("b", {"dsc": 0.7, "acc": 0.85, "se": 0.6, "sp": 0.97})]
        summary = summarize(rows)
        path = tmp_path / "report.txt"
        write_report(path, rows, summary)
        got_rows, got_summary = read_report(path)
        assert [r[0] for r in got_rows] == ["a", "b"]
        assert got_summary["dsc"]["mean"] == pytest.approx(0.8)
        assert got_rows[0][1]["dsc"] == pytest.approx(0.9)

    def test_summary_mean_std(self):
        rows = [("x", {"dsc": 1.0, "acc": 1.0, "se": 1.0, "sp": 1.0}),
                ("y", {"dsc": 0.5, "acc": 0.5, "se": 0.5, "sp": 0.5})]
        s = summarize(rows)
        assert s["dsc"]["mean"] == pytest.approx(0.75)
        assert s["dsc"]["std"] == pytest.approx(0.25)   # population std
