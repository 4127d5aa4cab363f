"""Desk-scale training: decoupled-weight-decay Adam, cosine annealing,
flip/rotate augmentation, the epoch loop, and dataset evaluation.

Everything is deterministic given the config seed: shuffling and
augmentation draw from per-epoch derived streams, so parallel data loading
could not change results even if added later.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .errors import EmptyDataset, InvalidDataset, ShapeMismatch
from .metrics import confusion, metrics_from_counts, summarize
from .net import NetConfig, NetOutput, build, forward, save_checkpoint
from .nn import sigmoid
from .objective import LossConfig, group_loss
from .rng import Xoshiro256, derive_seed
from .tensor import GradMap, ParamStore, Tensor, grads_for


@dataclass
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    t_max: int = 50
    lr_min: float = 1e-5
    epochs: int = 200
    max_steps: int | None = None       # desk-scale override; stops early
    batch_size_train: int = 8
    batch_size_eval: int = 1
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.lr_min >= self.lr:
            raise ShapeMismatch("lr_min must be below lr")
        if min(self.batch_size_train, self.batch_size_eval) < 1:
            raise ShapeMismatch("batch sizes must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(store: ParamStore, grads: GradMap, state: AdamState,
               lr: float, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update (bias-corrected).

    Decay multiplies parameters by (1 - lr*wd) before the moment update and
    is skipped for norm scales/biases. Parameters without a gradient entry
    are treated as zero-gradient (decay still applies).
    """
    state.t += 1
    b1, b2 = cfg.betas
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in store.items():
        g = grads[name].data if name in grads else None
        if g is not None and g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} vs param {p.shape} ({name})")
        if cfg.weight_decay and name not in store.no_decay:
            p.data *= (1.0 - lr * cfg.weight_decay)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data, dtype=np.float64)
            state.v[name] = np.zeros_like(p.data, dtype=np.float64)
        m, v = state.m[name], state.v[name]
        if g is not None:
            g64 = g.astype(np.float64)
            m *= b1
            m += (1.0 - b1) * g64
            v *= b2
            v += (1.0 - b2) * g64 * g64
        else:
            m *= b1
            v *= b2
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        p.data -= (lr * update).astype(p.data.dtype)


def cosine_lr(t: int, cfg: TrainConfig) -> float:
    """Cosine annealing clamped at lr_min after t_max; endpoints exact."""
    if t <= 0:
        return cfg.lr
    if t >= cfg.t_max:
        return cfg.lr_min
    return cfg.lr_min + (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * t / cfg.t_max)) / 2.0


def augment(image: np.ndarray, mask: np.ndarray, rng: Xoshiro256):
    """Random horizontal/vertical flips (p=0.5 each) and a rotation by a
    uniformly drawn multiple of 90 degrees, applied identically to both.

    The 90-degree rotation is clockwise: pixel (r, c) moves to (c, H-1-r).
    Masks stay binary because no interpolation occurs.
    """
    if rng.uniform() < 0.5:
        image = image[..., ::-1]
        mask = mask[..., ::-1]
    if rng.uniform() < 0.5:
        image = image[..., ::-1, :]
        mask = mask[..., ::-1, :]
    quarter_turns = rng.randint(4)
    if quarter_turns:
        image = np.rot90(image, -quarter_turns, axes=(-2, -1))
        mask = np.rot90(mask, -quarter_turns, axes=(-2, -1))
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def _stack_batch(samples: list[Sample], dtype: str):
    images = np.stack([s.image for s in samples]).astype(
        np.float32 if dtype == "f32" else np.float64)
    masks = np.stack([s.mask for s in samples]).astype(images.dtype)
    return images, masks


def train_loop(net_config: NetConfig, train_config: TrainConfig,
               train_samples: list[Sample], val_samples: list[Sample] | None = None,
               out_dir: str | None = None,
               loss_config: LossConfig | None = None,
               log_fn=None) -> tuple[ParamStore, list[dict]]:
    """Train on preprocessed samples; returns (params, history).

    History holds one record per epoch: epoch index, lr, mean train group
    loss, and validation DSC (train-set DSC when no validation split is
    provided). The best-by-validation checkpoint is written to
    ``out_dir/best.ckpt`` when ``out_dir`` is given.
    """
    if not train_samples:
        raise EmptyDataset("no training samples")
    loss_cfg = loss_config or LossConfig()
    store = build(net_config, seed=train_config.seed)
    adam = AdamState()
    eval_set = val_samples if val_samples else train_samples

    history: list[dict] = []
    best_dsc = -1.0
    steps_done = 0
    n = len(train_samples)
    bs = train_config.batch_size_train

    epoch = 0
    # max_steps dominates the epoch budget when set (desk-scale runs)
    def keep_going():
        if train_config.max_steps:
            return steps_done < train_config.max_steps
        return epoch < train_config.epochs

    while keep_going():
        lr = cosine_lr(epoch, train_config)
        order = _permutation(n, derive_seed(train_config.seed, "shuffle", epoch))
        losses = []
        for start in range(0, n, bs):
            batch_ids = order[start:start + bs]
            batch = []
            for j in batch_ids:
                s = train_samples[j]
                img, msk = s.image, s.mask
                if train_config.augment:
                    arng = Xoshiro256(
                        derive_seed(train_config.seed, "augment", epoch, int(j)), "aug")
                    img, msk = augment(img, msk, arng)
                batch.append(Sample(image=img, mask=msk, id=s.id))
            images, masks = _stack_batch(batch, store.dtype)
            out = forward(store, Tensor(images), training=True)
            total, _ = _batch_group_loss(out, masks, loss_cfg)
            grads = grads_for(total, store)
            adamw_step(store, grads, adam, lr, train_config)
            losses.append(total.item())
            steps_done += 1
            if train_config.max_steps and steps_done >= train_config.max_steps:
                break

        val_dsc = _mean_dsc(store, eval_set)
        record = {"epoch": epoch, "lr": lr,
                  "train_loss": float(np.mean(losses)), "val_dsc": val_dsc}
        history.append(record)
        if log_fn:
            log_fn(record)
        if out_dir and val_dsc > best_dsc:
            best_dsc = val_dsc
            save_checkpoint(store, os.path.join(out_dir, "best.ckpt"))
        epoch += 1
        if train_config.max_steps and steps_done >= train_config.max_steps:
            break

    if out_dir:
        save_checkpoint(store, os.path.join(out_dir, "last.ckpt"))
        write_history(os.path.join(out_dir, "history.csv"), history)
    return store, history


def _batch_group_loss(out: NetOutput, masks: np.ndarray, loss_cfg: LossConfig):
    probs = sigmoid(out.output_logits)
    stage_probs = [sigmoid(t) for t in out.stage_logits]
    return group_loss(probs, stage_probs, Tensor(masks), loss_cfg)


def _permutation(n: int, seed: int) -> list[int]:
    rng = Xoshiro256(seed, "perm")
    order = list(range(n))
    for i in range(n - 1, 0, -1):           # Fisher-Yates
        j = rng.randint(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def _mean_dsc(store: ParamStore, samples: list[Sample]) -> float:
    vals = []
    for s in samples:
        out = forward(store, Tensor(s.image[None].astype(np.float32)), training=False)
        probs = 1.0 / (1.0 + np.exp(-out.output_logits.data[0]))
        counts = confusion(probs, s.mask)
        vals.append(metrics_from_counts(counts)["dsc"])
    return float(np.mean(vals))


def write_history(path, history: list[dict]) -> None:
    lines = ["epoch,lr,train_loss,val_dsc"]
    for rec in history:
        lines.append(f"{rec['epoch']},{rec['lr']:.8g},"
                     f"{rec['train_loss']:.8g},{rec['val_dsc']:.8g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def evaluate(store: ParamStore, samples: list[Sample]):
    """Per-image DSC/ACC/SE/SP (batch size 1) plus mean and std."""
    if not samples:
        raise EmptyDataset("no samples to evaluate")
    per_image = []
    for s in samples:
        if s.mask is None:
            raise InvalidDataset(f"sample {s.id} has no mask")
        out = forward(store, Tensor(s.image[None].astype(np.float32)), training=False)
        probs = 1.0 / (1.0 + np.exp(-out.output_logits.data[0]))
        per_image.append((s.id, metrics_from_counts(confusion(probs, s.mask))))
    return per_image, summarize(per_image)
