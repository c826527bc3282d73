"""Dataset synthesis: the 2-D manifold, coloured digits, probes and strokes."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from arbench.models.bins import BinSpec
from arbench.models.dataset import Dataset

logger = logging.getLogger(__name__)

# Bright hues used to tint grey digits, RGB in [0, 1].
PALETTE = np.array(
    [
        [1.0, 0.2, 0.2],
        [0.2, 1.0, 0.2],
        [0.3, 0.4, 1.0],
        [1.0, 1.0, 0.2],
        [1.0, 0.2, 1.0],
        [0.2, 1.0, 1.0],
    ]
)

STROKE_CLASSES = ("horizontal", "vertical", "diagonal", "antidiagonal")


def gen_manifold2d(n: int, seed: int = 0, bins: Optional[BinSpec] = None) -> Dataset:
    """Points with x1 = 0 exactly and x2 ~ N(0, 1), clipped to the bin range."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    bins = bins or BinSpec.toy()
    rng = np.random.default_rng(seed)
    x2 = np.clip(rng.standard_normal(n), bins.lo, bins.hi)
    examples = np.stack([np.zeros(n), x2], axis=1)
    return Dataset(
        name="manifold2d",
        examples=examples,
        bins=bins,
        provenance=f"x1=0, x2~N(0,1), n={n}, seed={seed}",
    )


def _as_images(examples: np.ndarray) -> np.ndarray:
    examples = np.asarray(examples, dtype=np.float64)
    if examples.ndim == 3:
        examples = examples[:, None]
    if examples.ndim != 4:
        raise ValueError(f"expected (N, H, W) or (N, C, H, W) images, got shape {examples.shape}")
    return examples


def palette_assignment(n: int, seed: int) -> np.ndarray:
    """Hue index per image, deterministic in the seed."""
    return np.random.default_rng(seed).integers(len(PALETTE), size=n)


def colorize_mnist(images, seed: int = 0, bins: Optional[BinSpec] = None) -> Dataset:
    """Tint grey digits with a per-image hue, multiplicatively per channel.

    Pixel intensity t = (v - lo) / (hi - lo) becomes t * hue[c] in channel c,
    so black stays black and the channel mean is a monotone function of t.
    """
    if isinstance(images, Dataset):
        labels, bins, source = images.labels, bins or images.bins, images.examples
    else:
        labels, bins, source = None, bins or BinSpec.image(), images
    gray = _as_images(source)
    if gray.shape[1] != 1:
        raise ValueError(f"colorize_mnist needs single-channel images, got {gray.shape[1]} channels")
    hues = PALETTE[palette_assignment(len(gray), seed)]
    intensity = (gray - bins.lo) / (bins.hi - bins.lo)
    tinted = intensity * hues[:, :, None, None]
    colored = bins.snap(bins.lo + tinted * (bins.hi - bins.lo))
    return Dataset(
        name="colored_digits",
        examples=colored,
        labels=labels,
        bins=bins,
        provenance=f"multiplicative tint, palette of {len(PALETTE)}, seed={seed}",
    )


def decolorize(images: np.ndarray, bins: BinSpec) -> np.ndarray:
    """Channel mean, snapped to bins, as (N, 1, H, W)."""
    return bins.snap(np.asarray(images).mean(axis=1, keepdims=True))


def make_probe_images(
    kind: str,
    n: int,
    shape: tuple[int, ...] = (1, 28, 28),
    seed: int = 0,
    bins: Optional[BinSpec] = None,
) -> Dataset:
    """Uniform-noise, all-black or all-white probe images."""
    bins = bins or BinSpec.image()
    shape = (n,) + tuple(shape)
    if kind == "noise":
        levels = np.random.default_rng(seed).integers(bins.count, size=shape)
        examples = bins.from_levels(levels)
    elif kind == "black":
        examples = np.full(shape, bins.lo)
    elif kind == "white":
        examples = np.full(shape, bins.hi)
    else:
        raise ValueError(f"unknown probe kind {kind!r}; expected noise, black or white")
    return Dataset(name=kind, examples=examples, bins=bins, provenance=f"{kind} probe, seed={seed}")


def _segment_distance(rows: np.ndarray, cols: np.ndarray, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    direction = end - start
    length_sq = float(direction @ direction)
    rel_r, rel_c = rows - start[0], cols - start[1]
    t = np.clip((rel_r * direction[0] + rel_c * direction[1]) / length_sq, 0.0, 1.0)
    return np.hypot(rel_r - t * direction[0], rel_c - t * direction[1])


def gen_stroke_images(n: int, size: int = 28, seed: int = 0, bins: Optional[BinSpec] = None) -> Dataset:
    """Digit-like single strokes on a dark background, four shape classes.

    Classes: horizontal, vertical, diagonal and anti-diagonal strokes with
    random position, length and thickness.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    bins = bins or BinSpec.image()
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    labels = rng.integers(len(STROKE_CLASSES), size=n)
    images = np.empty((n, 1, size, size))
    margin = size * 0.2
    for i, label in enumerate(labels):
        centre = rng.uniform(margin, size - 1 - margin, size=2)
        half = rng.uniform(0.25, 0.4) * size
        thickness = rng.uniform(0.8, 1.6) * size / 28.0
        if label == 0:
            offset = np.array([0.0, half])
        elif label == 1:
            offset = np.array([half, 0.0])
        elif label == 2:
            offset = np.array([half, half]) / np.sqrt(2.0)
        else:
            offset = np.array([half, -half]) / np.sqrt(2.0)
        distance = _segment_distance(rows, cols, centre - offset, centre + offset)
        intensity = np.clip(1.0 + thickness - distance, 0.0, 1.0) * rng.uniform(0.8, 1.0)
        images[i, 0] = bins.lo + intensity * (bins.hi - bins.lo)
    return Dataset(
        name="strokes",
        examples=bins.snap(images),
        labels=labels,
        bins=bins,
        provenance=f"synthetic strokes, size={size}, seed={seed}",
    )


def downscale(dataset: Dataset) -> Dataset:
    """2x average pooling of image datasets, snapped back to the bins."""
    images = _as_images(dataset.examples)
    n, c, h, w = images.shape
    if h % 2 or w % 2:
        raise ValueError(f"downscale needs even image sides, got {h}x{w}")
    pooled = images.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return Dataset(
        name=dataset.name,
        examples=dataset.bins.snap(pooled),
        labels=dataset.labels,
        bins=dataset.bins,
        provenance=f"{dataset.provenance}; 2x downscaled",
    )


def split_dataset(dataset: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle into (kept, held-out) with ``fraction`` held out."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    held = max(1, int(round(len(dataset) * fraction)))
    return (
        dataset.subset(np.sort(order[held:]), name=f"{dataset.name}_train"),
        dataset.subset(np.sort(order[:held]), name=f"{dataset.name}_heldout"),
    )
