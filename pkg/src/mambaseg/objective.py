"""Loss stack: pixel BCE, Dice, squared Dice, their sum, and the
deep-supervision group loss.

All losses consume probabilities (sigmoid applied upstream) and binary
targets of the same shape, and are differentiable through the tape. Stage
losses compare each stage prediction at its native resolution against the
ground-truth mask downscaled there by nearest neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._resample import nearest_axis
from .errors import InvalidStageCount, ShapeMismatch
from .tensor import Tensor, clamp, log, tmean, tsum


@dataclass
class LossConfig:
    smooth: float = 1e-6
    clamp_eps: float = 1e-7
    lambdas: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)

    def __post_init__(self):
        if self.smooth <= 0:
            raise ShapeMismatch("smooth must be positive")
        if not (0 < self.clamp_eps < 0.5):
            raise ShapeMismatch("clamp_eps must lie in (0, 0.5)")
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if len(self.lambdas) != 5:
            raise InvalidStageCount(f"expected 5 stage weights, got {len(self.lambdas)}")


def _check_pair(p: Tensor, y: Tensor, op: str) -> None:
    if p.shape != y.shape:
        raise ShapeMismatch(f"{op}: prediction {p.shape} vs target {y.shape}")


def bce(p: Tensor, y: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped away from 0/1."""
    cfg = cfg or LossConfig()
    _check_pair(p, y, "bce")
    pc = clamp(p, cfg.clamp_eps, 1.0 - cfg.clamp_eps)
    term = y * log(pc) + (1.0 - y) * log(1.0 - pc)
    return -tmean(term)


def dice_loss(p: Tensor, y: Tensor, smooth: float = 1e-6) -> Tensor:
    _check_pair(p, y, "dice_loss")
    inter = tsum(p * y)
    denom = tsum(p) + tsum(y) + smooth
    return 1.0 - (2.0 * inter + smooth) / denom


def squared_dice_loss(p: Tensor, y: Tensor, smooth: float = 1e-6) -> Tensor:
    _check_pair(p, y, "squared_dice_loss")
    inter = tsum(p * y)
    sp = tsum(p)
    sy = tsum(y)
    return 1.0 - (2.0 * (inter * inter) + smooth) / (sp * sp + sy * sy + smooth)


def base_loss(p: Tensor, y: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """BCE + Dice + squared Dice, exactly the sum of the three components."""
    cfg = cfg or LossConfig()
    return bce(p, y, cfg) + dice_loss(p, y, cfg.smooth) \
        + squared_dice_loss(p, y, cfg.smooth)


def downscale_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor downscale of a [..., H, W] binary mask."""
    rows = nearest_axis(mask.shape[-2], out_h)
    cols = nearest_axis(mask.shape[-1], out_w)
    return np.ascontiguousarray(mask[..., rows[:, None], cols[None, :]])


def group_loss(output_p: Tensor, stage_p: Sequence[Tensor], target: Tensor,
               cfg: LossConfig | None = None) -> tuple[Tensor, dict]:
    """Output loss plus lambda-weighted stage losses.

    ``stage_p`` is ordered deepest first; lambda i grows toward the output
    resolution. Stage targets are the mask downscaled to each stage's size.
    Returns (total, breakdown) where the breakdown carries each term.
    """
    cfg = cfg or LossConfig()
    if len(stage_p) != len(cfg.lambdas):
        raise InvalidStageCount(
            f"expected {len(cfg.lambdas)} stage predictions, got {len(stage_p)}")
    out_term = base_loss(output_p, target, cfg)
    total = out_term
    stage_values = []
    for lam, pred in zip(cfg.lambdas, stage_p):
        tgt = Tensor(downscale_mask(target.data, pred.shape[-2], pred.shape[-1]))
        term = base_loss(pred, tgt, cfg)
        stage_values.append(term.item())
        total = total + lam * term
    breakdown = {
        "output": out_term.item(),
        "stages": stage_values,
        "lambdas": list(cfg.lambdas),
        "total": total.item(),
    }
    return total, breakdown
