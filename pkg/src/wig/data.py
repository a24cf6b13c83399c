"""Synthetic images with known signal regions, and NTF dataset directories.

Each image is Gaussian background noise plus a class-specific bar pattern
(horizontal, vertical, diagonal, anti-diagonal) of amplitude 1 drawn inside
a randomly placed square patch. The pattern pixels form the ground-truth
mask, and only the pattern determines the label.

A dataset directory holds ``images/*.ntf``, ``masks/*.ntf`` (0/1 values) and
``manifest.csv`` with columns ``path,label[,mask]`` relative to the directory.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import atomic_write, make_rng, read_ntf, write_ntf

log = logging.getLogger(__name__)

PATTERNS = ("horizontal", "vertical", "diagonal", "anti-diagonal")


def pattern_mask(label: int, size: int) -> np.ndarray:
    mid = size // 2
    m = np.zeros((size, size), dtype=bool)
    kind = PATTERNS[label]
    if kind == "horizontal":
        m[mid, :] = True
    elif kind == "vertical":
        m[:, mid] = True
    elif kind == "diagonal":
        m[np.arange(size), np.arange(size)] = True
    else:
        m[np.arange(size), size - 1 - np.arange(size)] = True
    return m


@dataclass
class SyntheticSample:
    image: np.ndarray         # C x H x W
    label: int
    ground_truth: np.ndarray  # H x W bool
    origin: tuple             # top-left corner of the signal patch


def make_sample(rng: np.random.Generator, height: int, width: int, channels: int,
                signal_size: int, noise_sigma: float, n_classes: int) -> SyntheticSample:
    label = int(rng.integers(n_classes))
    r = int(rng.integers(height - signal_size + 1))
    c = int(rng.integers(width - signal_size + 1))
    image = rng.normal(0.0, 1.0, (channels, height, width)) * noise_sigma
    gt = np.zeros((height, width), dtype=bool)
    gt[r:r + signal_size, c:c + signal_size] = pattern_mask(label, signal_size)
    image[:, gt] += 1.0
    return SyntheticSample(image, label, gt, (r, c))


def generate_samples(count: int, height: int = 10, width: int = 10, channels: int = 1,
                     signal_size: int = 4, noise_sigma: float = 0.3, n_classes: int = 2,
                     seed: int = 0) -> list[SyntheticSample]:
    if not 2 <= n_classes <= len(PATTERNS):
        raise ValueError(f"n_classes must lie in [2, {len(PATTERNS)}]")
    if not 2 <= signal_size <= min(height, width):
        raise ValueError("signal_size must fit inside the image and be >= 2")
    if count < 1 or channels < 1 or noise_sigma < 0:
        raise ValueError("count and channels must be >= 1, noise_sigma >= 0")
    rng = make_rng(seed)
    return [make_sample(rng, height, width, channels, signal_size, noise_sigma, n_classes)
            for _ in range(count)]


def write_dataset(out_dir, samples) -> Path:
    out = Path(out_dir)
    rows = []
    for i, s in enumerate(samples):
        img = f"images/{i:05d}.ntf"
        msk = f"masks/{i:05d}.ntf"
        write_ntf(out / img, s.image)
        write_ntf(out / msk, s.ground_truth.astype(np.float64))
        rows.append((img, s.label, msk))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("path", "label", "mask"))
    w.writerows(rows)
    atomic_write(out / "manifest.csv", buf.getvalue())
    return out / "manifest.csv"


@dataclass
class Dataset:
    root: Path
    paths: list
    images: np.ndarray        # N x C x H x W (or N x input shape)
    labels: np.ndarray
    masks: list | None        # per-sample bool H x W, or None if absent

    def __len__(self):
        return len(self.paths)


def load_dataset(root, limit: int | None = None, offset: int = 0) -> Dataset:
    """Read a manifest directory. Masks are optional; missing ones disable overlap."""
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FormatError(f"manifest: {manifest} not found")
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
            raise FormatError("manifest: header must contain 'path,label'")
        rows = list(reader)
    rows = rows[offset:offset + limit if limit is not None else None]
    if not rows:
        raise FormatError("manifest: no samples selected")
    images, labels, masks = [], [], []
    have_masks = True
    for i, row in enumerate(rows):
        try:
            labels.append(int(row["label"]))
        except (TypeError, ValueError):
            raise FormatError(f"manifest row {offset + i}: label {row['label']!r} is not an integer") from None
        images.append(read_ntf(root / row["path"]))
        mpath = row.get("mask")
        if mpath and (root / mpath).exists():
            masks.append(read_ntf(root / mpath) > 0.5)
        else:
            have_masks = False
    if not have_masks:
        log.warning("ground-truth masks missing in %s; overlap metrics disabled", root)
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise FormatError(f"manifest: images have inconsistent shapes {sorted(shapes)}")
    return Dataset(root, [r["path"] for r in rows], np.stack(images),
                   np.asarray(labels, dtype=np.int64), masks if have_masks else None)
