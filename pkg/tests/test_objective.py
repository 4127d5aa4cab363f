import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mambaseg.errors import InvalidStageCount, ShapeMismatch
from mambaseg.objective import (LossConfig, base_loss, bce, dice_loss,
                                downscale_mask, group_loss, squared_dice_loss)
from mambaseg.rng import Xoshiro256
from mambaseg.tensor import from_array


# -- independent scalar-loop references --------------------------------------

def ref_bce(p, y, eps=1e-7):
    total = 0.0
    for pi, yi in zip(p.ravel().tolist(), y.ravel().tolist()):
        pc = min(max(pi, eps), 1.0 - eps)
        total += yi * math.log(pc) + (1.0 - yi) * math.log(1.0 - pc)
    return -total / p.size


def ref_dice(p, y, smooth):
    inter = sp = sy = 0.0
    for pi, yi in zip(p.ravel().tolist(), y.ravel().tolist()):
        inter += pi * yi
        sp += pi
        sy += yi
    return 1.0 - (2.0 * inter + smooth) / (sp + sy + smooth)


def ref_sq_dice(p, y, smooth):
    inter = sp = sy = 0.0
    for pi, yi in zip(p.ravel().tolist(), y.ravel().tolist()):
        inter += pi * yi
        sp += pi
        sy += yi
    return 1.0 - (2.0 * inter * inter + smooth) / (sp * sp + sy * sy + smooth)


def random_pair(seed, n=24):
    rng = Xoshiro256(seed, "loss-oracle")
    p = np.array([rng.uniform() for _ in range(n)])
    y = np.array([1.0 if rng.uniform() > 0.5 else 0.0 for _ in range(n)])
    return p, y


class TestBce:
    def test_perfect_prediction(self):
        y = np.array([1.0, 0.0, 1.0])
        out = bce(from_array(y, dtype="f64"), from_array(y, dtype="f64"))
        assert out.item() <= 1e-6

    def test_worked_value(self):
        p = from_array([0.8, 0.4], dtype="f64")
        y = from_array([1.0, 0.0], dtype="f64")
        got = bce(p, y).item()
        exact = -(math.log(0.8) + math.log(0.6)) / 2.0
        assert abs(got - exact) <= 1e-12
        assert got == pytest.approx(0.366958, abs=5e-5)

    def test_clamp_behavior(self):
        cfg = LossConfig()
        p = from_array([0.0], dtype="f64")
        y = from_array([1.0], dtype="f64")
        got = bce(p, y, cfg).item()
        assert got == pytest.approx(-math.log(cfg.clamp_eps), rel=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            bce(from_array([0.5], dtype="f64"), from_array([1.0, 0.0], dtype="f64"))


class TestDice:
    def test_perfect_overlap(self):
        y = np.array([1.0, 0.0, 1.0, 1.0])
        out = dice_loss(from_array(y, dtype="f64"), from_array(y, dtype="f64"),
                        smooth=1e-6)
        assert abs(out.item()) <= 1e-6

    def test_worked_half(self):
        p = from_array([1.0, 1.0, 0.0, 0.0], dtype="f64")
        y = from_array([1.0, 0.0, 1.0, 0.0], dtype="f64")
        assert dice_loss(p, y, smooth=1e-12).item() == pytest.approx(0.5, abs=1e-9)

    def test_empty_masks_stable(self):
        z = from_array([0.0, 0.0], dtype="f64")
        assert dice_loss(z, z, smooth=1e-6).item() == 0.0


class TestSquaredDice:
    def test_perfect_binary(self):
        y = np.array([1.0, 1.0, 0.0])
        out = squared_dice_loss(from_array(y, dtype="f64"), from_array(y, dtype="f64"),
                                smooth=1e-12)
        assert abs(out.item()) <= 1e-9

    def test_worked_three_quarters(self):
        p = from_array([1.0, 1.0, 0.0, 0.0], dtype="f64")
        y = from_array([1.0, 0.0, 1.0, 0.0], dtype="f64")
        assert squared_dice_loss(p, y, smooth=1e-12).item() == pytest.approx(0.75, abs=1e-9)

    def test_disjoint_is_one(self):
        p = from_array([1.0, 0.0], dtype="f64")
        y = from_array([0.0, 1.0], dtype="f64")
        assert squared_dice_loss(p, y, smooth=1e-12).item() == pytest.approx(1.0, abs=1e-9)


class TestBaseLoss:
    def test_perfect(self):
        y = np.array([1.0, 0.0, 1.0])
        out = base_loss(from_array(y, dtype="f64"), from_array(y, dtype="f64"))
        assert out.item() <= 1e-5

    def test_compositional(self):
        p, y = random_pair(3)
        cfg = LossConfig()
        total = base_loss(from_array(p, dtype="f64"), from_array(y, dtype="f64"), cfg)
        parts = (bce(from_array(p, dtype="f64"), from_array(y, dtype="f64"), cfg).item()
                 + dice_loss(from_array(p, dtype="f64"), from_array(y, dtype="f64"),
                             cfg.smooth).item()
                 + squared_dice_loss(from_array(p, dtype="f64"),
                                     from_array(y, dtype="f64"), cfg.smooth).item())
        assert abs(total.item() - parts) <= 1e-12

    def test_worked_clamped_case(self):
        p = from_array([1.0, 1.0, 0.0, 0.0], dtype="f64")
        y = from_array([1.0, 0.0, 1.0, 0.0], dtype="f64")
        cfg = LossConfig(smooth=1e-12)
        got = base_loss(p, y, cfg).item()
        bce_part = 2.0 * -math.log(1e-7) / 4.0
        assert got == pytest.approx(bce_part + 0.5 + 0.75, abs=1e-3)
        assert bce_part == pytest.approx(8.0590, abs=1e-3)


class TestGroupLoss:
    def make_stages(self, value, sides=(2, 4, 8, 16, 32)):
        return [from_array(np.full((1, 1, s, s), value), dtype="f64") for s in sides]

    def test_perfect_zero(self):
        target = np.zeros((1, 1, 32, 32))
        target[0, 0, 8:24, 8:24] = 1.0
        stages = [from_array(downscale_mask(target, s, s), dtype="f64")
                  for s in (2, 4, 8, 16, 32)]
        total, breakdown = group_loss(from_array(target, dtype="f64"), stages,
                                      from_array(target, dtype="f64"))
        assert total.item() <= 1e-4
        assert all(v <= 1e-4 for v in breakdown["stages"])

    def test_lambda_vector(self):
        cfg = LossConfig()
        assert cfg.lambdas == (0.1, 0.2, 0.3, 0.4, 0.5)

    def test_compositional_total(self):
        rng = Xoshiro256(9, "gl")
        target = np.array([[1.0 if rng.uniform() > 0.5 else 0.0
                            for _ in range(32)] for _ in range(32)])[None, None]
        stages = self.make_stages(0.3)
        out = from_array(np.full((1, 1, 32, 32), 0.6), dtype="f64")
        total, breakdown = group_loss(out, stages, from_array(target, dtype="f64"))
        expect = breakdown["output"] + sum(
            lam * v for lam, v in zip(breakdown["lambdas"], breakdown["stages"]))
        assert abs(total.item() - expect) <= 1e-12

    def test_wrong_stage_count(self):
        target = from_array(np.zeros((1, 1, 8, 8)), dtype="f64")
        with pytest.raises(InvalidStageCount):
            group_loss(target, self.make_stages(0.5)[:4], target)

    def test_monotone_in_each_stage(self):
        # worsening one stage prediction (others fixed) raises the total
        rng = Xoshiro256(11, "gl2")
        target = np.array([[1.0 if rng.uniform() > 0.5 else 0.0
                            for _ in range(32)] for _ in range(32)])[None, None]
        tgt = from_array(target, dtype="f64")
        for idx, side in enumerate((2, 4, 8, 16, 32)):
            stages = [from_array(
                np.clip(downscale_mask(target, s, s), 0.02, 0.98), dtype="f64")
                for s in (2, 4, 8, 16, 32)]
            base_total, _ = group_loss(tgt, stages, tgt)
            worse = from_array(
                np.abs(downscale_mask(target, side, side) - 0.45), dtype="f64")
            stages[idx] = worse
            worse_total, _ = group_loss(tgt, stages, tgt)
            assert worse_total.item() > base_total.item()


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(8))
    def test_losses_match_scalar_loops(self, seed):
        p, y = random_pair(seed)
        cfg = LossConfig()
        pt, yt = from_array(p, dtype="f64"), from_array(y, dtype="f64")
        assert abs(bce(pt, yt, cfg).item() - ref_bce(p, y, cfg.clamp_eps)) <= 1e-9
        assert abs(dice_loss(pt, yt, cfg.smooth).item()
                   - ref_dice(p, y, cfg.smooth)) <= 1e-9
        assert abs(squared_dice_loss(pt, yt, cfg.smooth).item()
                   - ref_sq_dice(p, y, cfg.smooth)) <= 1e-9

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariance(self, seed):
        p, y = random_pair(seed, n=16)
        perm = np.argsort(np.sin(np.arange(16) * (seed + 1)))
        pt, yt = from_array(p, dtype="f64"), from_array(y, dtype="f64")
        pp, yp = from_array(p[perm], dtype="f64"), from_array(y[perm], dtype="f64")
        assert base_loss(pt, yt).item() == pytest.approx(base_loss(pp, yp).item(),
                                                         abs=1e-12)

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_losses_nonnegative(self, seed):
        p, y = random_pair(seed, n=16)
        pt, yt = from_array(p, dtype="f64"), from_array(y, dtype="f64")
        assert bce(pt, yt).item() >= 0.0
        assert 0.0 <= dice_loss(pt, yt, 1e-6).item() <= 1.0
        assert squared_dice_loss(pt, yt, 1e-6).item() >= 0.0


class TestDownscale:
    def test_preserves_binarity(self):
        rng = Xoshiro256(4, "mask")
        mask = np.array([[1.0 if rng.uniform() > 0.7 else 0.0
                          for _ in range(16)] for _ in range(16)])[None, None]
        small = downscale_mask(mask, 4, 4)
        assert set(np.unique(small)) <= {0.0, 1.0}
        assert small.shape == (1, 1, 4, 4)

    def test_center_sampling(self):
        mask = np.zeros((1, 1, 4, 4))
        mask[0, 0, 1, 1] = 1.0       # block-center of the top-left 2x2 block
        small = downscale_mask(mask, 2, 2)
        assert small[0, 0, 0, 0] == 1.0
