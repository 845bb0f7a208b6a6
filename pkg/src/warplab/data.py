"""Datasets: CIFAR-10 binary batches and synthetic glyph images.

CIFAR-10 binary layout: 3073-byte records, one label byte in 0..9
followed by 3072 pixel bytes (red plane, green plane, blue plane, each
32x32 row-major). Pixels load as float32 in [0, 1] (divided by 255).

The synthetic set draws one of eight glyph shapes over a noisy background;
shape is the class signal. With jitter, glyph color, position and scale
are randomized per image (color carries no label information); with
jitter=0 every class gets a fixed color, center and scale on a flat
background, so classes are linearly separable by mean color.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError
from .rng import RngStream

RECORD_BYTES = 3073
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    images: np.ndarray   # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray   # (N,) int64
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ContractError(f"images must be NCHW, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ContractError("labels length does not match images")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels out of range for {self.num_classes} classes")

    def __len__(self) -> int:
        return self.images.shape[0]

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)


def _parse_cifar_records(raw: bytes, path: str):
    if len(raw) == 0 or len(raw) % RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: size {len(raw)} is not a positive multiple of {RECORD_BYTES}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = arr[:, 0]
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"{path}: label byte {int(labels[i])} > 9 in record {i} (offset {i * RECORD_BYTES})")
    images = arr[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / np.float32(255.0)
    return images, labels.astype(np.int64)


def load_cifar10(root: str, split: str = "train") -> Dataset:
    """Load the binary batches from `root` (train: data_batch_1..5, test:
    test_batch)."""
    if split not in ("train", "test"):
        raise ContractError(f"split must be 'train' or 'test', got {split!r}")
    names = TRAIN_FILES if split == "train" else TEST_FILES
    images, labels = [], []
    for name in names:
        path = os.path.join(root, name)
        if not os.path.exists(path):
            raise FormatError(f"{path}: missing batch file")
        with open(path, "rb") as fh:
            img, lab = _parse_cifar_records(fh.read(), path)
        images.append(img)
        labels.append(lab)
    return Dataset(np.concatenate(images), np.concatenate(labels), num_classes=10)


def cifar_batch_bytes(ds: Dataset) -> bytes:
    """Serialize back to the 3073-byte record format (exact round-trip for
    images that came from bytes; other floats quantize to the nearest
    1/255 step)."""
    n, c, h, w = ds.images.shape
    if (c, h, w) != (3, 32, 32):
        raise ContractError(f"CIFAR-10 records are 3x32x32, got {(c, h, w)}")
    out = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = ds.labels.astype(np.uint8)
    px = np.rint(ds.images.astype(np.float64) * 255.0).clip(0, 255).astype(np.uint8)
    out[:, 1:] = px.reshape(n, -1)
    return out.tobytes()


def subset_per_class(ds: Dataset, per_class: int, rng: RngStream) -> Dataset:
    """Class-balanced random subset, deterministic in the stream."""
    picks = []
    for c in range(ds.num_classes):
        idx = np.nonzero(ds.labels == c)[0]
        if len(idx) < per_class:
            raise ContractError(f"class {c} has only {len(idx)} samples, wanted {per_class}")
        sel = rng.child(0x5B5, c).choice(len(idx), per_class)
        picks.append(idx[np.sort(sel)])
    return ds.take(np.concatenate(picks))


# ------------------------------------------------------------ synthetic

_GLYPHS = 8
# fixed, well-separated colors for the jitter=0 regime
_FLAT_COLORS = np.array([
    [0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9], [0.9, 0.9, 0.1],
    [0.9, 0.1, 0.9], [0.1, 0.9, 0.9], [0.9, 0.5, 0.1], [0.6, 0.6, 0.6],
], dtype=np.float32)


def _glyph_mask(kind: int, h: int, w: int, cy: float, cx: float, size: float) -> np.ndarray:
    yy = (np.arange(h, dtype=np.float64)[:, None] - cy) / size
    xx = (np.arange(w, dtype=np.float64)[None, :] - cx) / size
    box = (np.abs(yy) <= 1.0) & (np.abs(xx) <= 1.0)
    r2 = yy * yy + xx * xx
    if kind == 0:    # filled square
        return box
    if kind == 1:    # disk
        return r2 <= 1.0
    if kind == 2:    # plus sign
        return box & ((np.abs(yy) <= 0.34) | (np.abs(xx) <= 0.34))
    if kind == 3:    # diagonal band
        return box & (np.abs(yy - xx) <= 0.45)
    if kind == 4:    # ring
        return (r2 <= 1.0) & (r2 >= 0.55 ** 2)
    if kind == 5:    # lower-left triangle
        return box & (yy >= xx)
    if kind == 6:    # two horizontal bars
        return box & ((np.abs(yy - 0.55) <= 0.22) | (np.abs(yy + 0.55) <= 0.22))
    if kind == 7:    # opposite-quadrant checker
        return box & ((yy > 0) == (xx > 0))
    raise ContractError(f"no glyph {kind}")


def synth_shapes(per_class: int, num_classes: int = 8, height: int = 16,
                 width: int = 16, rng: RngStream | None = None,
                 jitter: float = 1.0) -> Dataset:
    """Glyph-on-noise classification set; class = glyph shape."""
    if not 2 <= num_classes <= _GLYPHS:
        raise ContractError(f"num_classes must be in [2, {_GLYPHS}], got {num_classes}")
    if height < 8 or width < 8:
        raise ContractError("synth images need at least 8x8 pixels")
    if rng is None:
        rng = RngStream(0)
    j = float(np.clip(jitter, 0.0, 1.0))
    images = np.empty((num_classes * per_class, 3, height, width), dtype=np.float32)
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    k = 0
    for cls in range(num_classes):
        for i in range(per_class):
            r = rng.child(0x5A, cls, i)
            if j > 0:
                bg = r.uniform((3, height, width), 0.5 - 0.25 * j, 0.5 + 0.25 * j)
            else:
                bg = np.full((3, height, width), 0.5)
            cy = (height - 1) / 2 + r.uniform(None, -1, 1) * 0.22 * j * height
            cx = (width - 1) / 2 + r.uniform(None, -1, 1) * 0.22 * j * width
            size = min(height, width) * (0.32 + 0.10 * j * r.uniform(None, -1, 1))
            color = r.uniform(3) if j > 0 else _FLAT_COLORS[cls]
            mask = _glyph_mask(cls, height, width, cy, cx, size)
            img = bg.copy()
            img[:, mask] = color[:, None]
            images[k] = img
            labels[k] = cls
            k += 1
    return Dataset(images, labels, num_classes=num_classes)
