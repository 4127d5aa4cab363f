"""Image/mask I/O, preprocessing, and a deterministic synthetic lesion
generator for desk-scale runs.

Dataset layout: ``root/images/<id>.png`` (8-bit RGB), ``root/masks/<id>.png``
(8-bit grayscale, binarized at 128 on load), split files ``root/train.txt``
/ ``val.txt`` / ``test.txt`` with one id per line.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from ._resample import bilinear_axis, nearest_axis
from .errors import CorruptImage, InvalidSample, IoError, NotFound
from .rng import Xoshiro256, derive_seed


@dataclass
class Sample:
    image: np.ndarray          # [3, H, W] float32
    mask: np.ndarray | None    # [1, H, W] float32 in {0, 1}
    id: str = ""


@dataclass
class DatasetSplit:
    root: str
    train: list[str] = field(default_factory=list)
    val: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Resizing
# ---------------------------------------------------------------------------

def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel bilinear resize of a [..., H, W] array."""
    h, w = arr.shape[-2], arr.shape[-1]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    ilo, ihi, ifr = bilinear_axis(h, out_h)
    jlo, jhi, jfr = bilinear_axis(w, out_w)
    ifr = ifr.reshape(-1, 1)
    jfr = jfr.reshape(1, -1)
    top = arr[..., ilo, :]
    bot = arr[..., ihi, :]
    out = ((top[..., jlo] * (1 - jfr) + top[..., jhi] * jfr) * (1 - ifr)
           + (bot[..., jlo] * (1 - jfr) + bot[..., jhi] * jfr) * ifr)
    return out.astype(arr.dtype)


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape[-2], arr.shape[-1]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    rows = nearest_axis(h, out_h)
    cols = nearest_axis(w, out_w)
    return np.ascontiguousarray(arr[..., rows[:, None], cols[None, :]])


# ---------------------------------------------------------------------------
# Loading / saving
# ---------------------------------------------------------------------------

def load_sample(root: str, sample_id: str) -> Sample:
    img_path = os.path.join(root, "images", f"{sample_id}.png")
    mask_path = os.path.join(root, "masks", f"{sample_id}.png")
    if not os.path.exists(img_path):
        raise NotFound(img_path)
    try:
        with Image.open(img_path) as im:
            image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except UnidentifiedImageError as exc:
        raise CorruptImage(f"{img_path}: {exc}") from exc
    image = np.ascontiguousarray(image.transpose(2, 0, 1))

    mask = None
    if os.path.exists(mask_path):
        try:
            with Image.open(mask_path) as im:
                raw = np.asarray(im.convert("L"), dtype=np.float32)
        except UnidentifiedImageError as exc:
            raise CorruptImage(f"{mask_path}: {exc}") from exc
        mask = (raw >= 128).astype(np.float32)[None]
        if mask.shape[1:] != image.shape[1:]:
            raise InvalidSample(
                f"{sample_id}: image {image.shape[1:]} vs mask {mask.shape[1:]}")
    return Sample(image=image, mask=mask, id=sample_id)


def save_mask(mask_probs: np.ndarray, path: str, threshold: float = 0.5) -> None:
    """Write [1,H,W] (or [H,W]) probabilities as a {0,255} grayscale PNG."""
    arr = np.asarray(mask_probs)
    if arr.ndim == 3:
        arr = arr[0]
    binary = (arr >= threshold).astype(np.uint8) * 255
    try:
        Image.fromarray(binary, mode="L").save(path)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def preprocess(sample: Sample, target_size: int = 256) -> Sample:
    """Resize (bilinear image, nearest mask) and standardize per channel.

    Standardization is per image: each channel to zero mean, unit variance
    with a 1e-6 variance floor. Idempotent up to that floor.
    """
    image = resize_bilinear(sample.image, target_size, target_size)
    mean = image.mean(axis=(1, 2), keepdims=True, dtype=np.float64)
    var = image.var(axis=(1, 2), keepdims=True, dtype=np.float64)
    image = ((image - mean) / np.sqrt(np.maximum(var, 1e-6))).astype(np.float32)
    mask = None
    if sample.mask is not None:
        mask = resize_nearest(sample.mask, target_size, target_size)
    return Sample(image=image, mask=mask, id=sample.id)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _read_ids(path: str) -> list[str]:
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def load_split(root: str) -> DatasetSplit:
    """Read split files; with none present, every image becomes training."""
    split = DatasetSplit(root=root,
                         train=_read_ids(os.path.join(root, "train.txt")),
                         val=_read_ids(os.path.join(root, "val.txt")),
                         test=_read_ids(os.path.join(root, "test.txt")))
    if not (split.train or split.val or split.test):
        img_dir = os.path.join(root, "images")
        if not os.path.isdir(img_dir):
            raise NotFound(img_dir)
        split.train = sorted(os.path.splitext(f)[0] for f in os.listdir(img_dir)
                             if f.endswith(".png"))
    return split


def _write_ids(path: str, ids: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id in ids:
            fh.write(sample_id + "\n")


def load_samples(root: str, ids: list[str], target_size: int | None = None) -> list[Sample]:
    samples = [load_sample(root, sample_id) for sample_id in ids]
    if target_size:
        samples = [preprocess(s, target_size) for s in samples]
    return samples


# ---------------------------------------------------------------------------
# Synthetic lesion generator
# ---------------------------------------------------------------------------

def synth_generate(n: int, size: int, seed: int, out_root: str) -> DatasetSplit:
    """Write ``n`` synthetic dermoscopy-style image/mask pairs.

    Each image carries a textured skin-tone background, one or two
    soft-edged elliptical lesions (total area fraction kept in [0.02, 0.4]),
    and sometimes hair-like dark curves. Fully determined by (n, size, seed).
    Fewer than 20 samples go entirely to the train split; larger sets are
    split 70/15/15 in id order.
    """
    if n < 1:
        raise InvalidSample("need n >= 1")
    img_dir = os.path.join(out_root, "images")
    mask_dir = os.path.join(out_root, "masks")
    try:
        os.makedirs(img_dir, exist_ok=True)
        os.makedirs(mask_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"{out_root}: {exc}") from exc

    ids = []
    for i in range(n):
        sample_id = f"synth_{i:04d}"
        rng = Xoshiro256(derive_seed(seed, "data", i), "synth")
        image, mask = _render_sample(size, rng)
        Image.fromarray((image * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0),
                        mode="RGB").save(os.path.join(img_dir, f"{sample_id}.png"))
        Image.fromarray((mask[0] * 255).astype(np.uint8), mode="L").save(
            os.path.join(mask_dir, f"{sample_id}.png"))
        ids.append(sample_id)

    if n < 20:
        split = DatasetSplit(root=out_root, train=ids)
    else:
        n_train = int(n * 0.7)
        n_val = int(n * 0.15)
        split = DatasetSplit(root=out_root, train=ids[:n_train],
                             val=ids[n_train:n_train + n_val],
                             test=ids[n_train + n_val:])
    _write_ids(os.path.join(out_root, "train.txt"), split.train)
    _write_ids(os.path.join(out_root, "val.txt"), split.val)
    _write_ids(os.path.join(out_root, "test.txt"), split.test)
    return split


def _smooth_noise(size: int, rng: Xoshiro256, grid: int = 9) -> np.ndarray:
    coarse = np.empty((grid, grid), dtype=np.float64)
    rng.fill_gauss(coarse)
    return resize_bilinear(coarse, size, size)


def _render_sample(size: int, rng: Xoshiro256):
    # skin-tone background with gentle low-frequency texture
    base = np.array([rng.uniform_in(0.65, 0.85), rng.uniform_in(0.45, 0.65),
                     rng.uniform_in(0.35, 0.55)])
    image = np.empty((3, size, size), dtype=np.float64)
    for c in range(3):
        image[c] = base[c] + 0.03 * _smooth_noise(size, rng)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    lesion_color = np.array([rng.uniform_in(0.25, 0.45), rng.uniform_in(0.15, 0.3),
                             rng.uniform_in(0.1, 0.25)])

    n_lesions = 1 + (1 if rng.uniform() < 0.3 else 0)
    target_frac = rng.uniform_in(0.06, 0.25) / n_lesions
    for _ in range(n_lesions):
        radius = size * math.sqrt(target_frac / math.pi)
        aspect = rng.uniform_in(0.7, 1.4)
        a = max(radius * aspect, 2.0)
        b = max(radius / aspect, 2.0)
        cx = rng.uniform_in(0.3 * size, 0.7 * size)
        cy = rng.uniform_in(0.3 * size, 0.7 * size)
        theta = rng.uniform_in(0.0, math.pi)
        ct, st = math.cos(theta), math.sin(theta)
        xr = (xx - cx) * ct + (yy - cy) * st
        yr = -(xx - cx) * st + (yy - cy) * ct
        q = (xr / a) ** 2 + (yr / b) ** 2
        mask |= q <= 1.0
        # soft edge: blend strength fades between q=1 and q~1.4
        alpha = np.clip((1.2 - q) / 0.4, 0.0, 1.0) * rng.uniform_in(0.75, 0.95)
        for c in range(3):
            image[c] = image[c] * (1 - alpha) + lesion_color[c] * alpha

    if rng.uniform() < 0.5:                     # hair-like dark arcs
        for _ in range(1 + rng.randint(3)):
            x0, y0 = rng.uniform_in(0, size), rng.uniform_in(0, size)
            x1, y1 = rng.uniform_in(0, size), rng.uniform_in(0, size)
            bendx = rng.uniform_in(-0.4 * size, 0.4 * size)
            bendy = rng.uniform_in(-0.4 * size, 0.4 * size)
            ts = np.linspace(0.0, 1.0, 3 * size)
            px = (1 - ts) ** 2 * x0 + 2 * (1 - ts) * ts * ((x0 + x1) / 2 + bendx) \
                + ts ** 2 * x1
            py = (1 - ts) ** 2 * y0 + 2 * (1 - ts) * ts * ((y0 + y1) / 2 + bendy) \
                + ts ** 2 * y1
            px = np.clip(np.round(px).astype(int), 0, size - 1)
            py = np.clip(np.round(py).astype(int), 0, size - 1)
            image[:, py, px] *= 0.45

    # guarantee a nonempty mask with area fraction inside [0.02, 0.4]
    frac = mask.mean()
    if frac < 0.02 or frac > 0.4 or not mask.any():
        cx = cy = size / 2
        r = size * math.sqrt(0.1 / math.pi)
        q = ((xx - cx) ** 2 + (yy - cy) ** 2) / (r * r)
        mask = q <= 1.0
        alpha = np.clip((1.2 - q) / 0.4, 0.0, 1.0) * 0.85
        for c in range(3):
            image[c] = image[c] * (1 - alpha) + lesion_color[c] * alpha

    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return image, mask[None].astype(np.float32)
