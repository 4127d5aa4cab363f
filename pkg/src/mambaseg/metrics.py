"""Confusion-count accumulation and the four segmentation metrics.

Counts merge by addition, so dataset evaluation can proceed image by image.
Degenerate denominators resolve to 1 when the condition is vacuously
satisfied (no positives at all gives SE = 1, etc.).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMask, ShapeMismatch

METRIC_NAMES = ("dsc", "acc", "se", "sp")


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def merged(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion(pred_probs, gt_mask, threshold: float = 0.5) -> ConfusionCounts:
    """Binarize predictions at ``threshold`` (>= is positive) and count."""
    pred = np.asarray(pred_probs, dtype=np.float64)
    gt = np.asarray(gt_mask, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"confusion: {pred.shape} vs {gt.shape}")
    if not np.all((gt == 0) | (gt == 1)):
        raise InvalidMask("ground truth must be binary")
    pos = pred >= threshold
    truth = gt == 1
    tp = int(np.count_nonzero(pos & truth))
    fp = int(np.count_nonzero(pos & ~truth))
    fn = int(np.count_nonzero(~pos & truth))
    tn = int(np.count_nonzero(~pos & ~truth))
    return ConfusionCounts(tp, fp, fn, tn)


def metrics_from_counts(c: ConfusionCounts) -> dict:
    def ratio(num: int, den: int) -> float:
        return num / den if den else 1.0

    return {
        "dsc": ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "acc": ratio(c.tp + c.tn, c.total),
        "se": ratio(c.tp, c.tp + c.fn),
        "sp": ratio(c.tn, c.tn + c.fp),
    }


def summarize(per_image: list[tuple[str, dict]]) -> dict:
    """Mean and population std of each metric over per-image rows."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([m[name] for _, m in per_image], dtype=np.float64)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def write_report(path, per_image: list[tuple[str, dict]], summary: dict) -> None:
    """Key-value text document: summary lines then one line per image."""
    lines = []
    for name in METRIC_NAMES:
        s = summary[name]
        lines.append(f"mean {name} {s['mean']:.6f}")
        lines.append(f"std {name} {s['std']:.6f}")
    for image_id, m in per_image:
        vals = " ".join(f"{m[name]:.6f}" for name in METRIC_NAMES)
        lines.append(f"image {image_id} {vals}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path) -> tuple[list[tuple[str, dict]], dict]:
    summary: dict = {name: {} for name in METRIC_NAMES}
    per_image = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] in ("mean", "std"):
                summary[parts[1]][parts[0]] = float(parts[2])
            elif parts[0] == "image":
                vals = dict(zip(METRIC_NAMES, map(float, parts[2:])))
                per_image.append((parts[1], vals))
    return per_image, summary
