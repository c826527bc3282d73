"""Gradient descent on inputs under a frozen AR model, and gradient-norm fields."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from arbench.autodiff import functional as F
from arbench.autodiff.tape import Tape
from arbench.autodiff.tensor import Tensor
from arbench.core.config import settings
from arbench.core.errors import NonFiniteError, SampleOptimizationError, ShapeError
from arbench.density.discretized import LN2
from arbench.models.bins import BinSpec
from arbench.models.configs import GridSpec
from arbench.models.dataset import Dataset
from arbench.models.records import DensityField, GradField, TrajectoryRecord, TrajectorySummary
from arbench.networks.base import ARModel
from arbench.utils.datasets import make_probe_images

logger = logging.getLogger(__name__)

PROBE_KINDS = ("digits", "noise", "black", "gray", "white")


def logprob_and_input_grad(model: ARModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example log p(x) and the gradient of sum(log p) with respect to x."""
    with Tape() as tape:
        leaf = Tensor(x, requires_grad=True)
        logprob = model.logprob(leaf)
        total = F.reduce_sum(logprob)
        # Context-free models never touch the input.
        grads = tape.backward(total) if tape.tracks(total) else {}
    return logprob.data, grads.get(leaf, np.zeros(leaf.shape))


def _per_sample_norm(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(values.reshape(len(values), -1) ** 2, axis=1))


def optimize_samples(
    model: ARModel,
    x0: np.ndarray,
    steps: int,
    lr: float,
    log_every: int = 1,
) -> list[TrajectoryRecord]:
    """Plain gradient descent on -log p(x) with the model frozen.

    After every step x is clamped to the model's bin range. Iteration 0, every
    ``log_every``-th iteration and the final iteration are logged.

    Raises:
        ValueError: If ``steps`` is negative or ``log_every`` < 1.
        SampleOptimizationError: If the input gradient becomes non-finite.
    """
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    if log_every < 1:
        raise ValueError(f"log_every must be at least 1, got {log_every}")
    x = np.array(x0, dtype=np.float64)
    model.check_input(x)
    lo, hi = model.bins.lo, model.bins.hi
    dims = model.dims
    records: list[TrajectoryRecord] = []
    last_step = 0.0
    for k in range(steps + 1):
        try:
            logprob, grad = logprob_and_input_grad(model, x)
        except NonFiniteError as e:
            raise SampleOptimizationError(k, x.copy()) from e
        if not np.all(np.isfinite(grad)):
            raise SampleOptimizationError(k, x.copy())
        bits = -logprob / (dims * LN2)
        if k % log_every == 0 or k == steps:
            records.append(
                TrajectoryRecord(
                    iteration=k,
                    sample=x.copy(),
                    nll_bits_per_dim=float(np.mean(bits)),
                    grad_norm=float(np.sqrt(np.sum(grad * grad))),
                    per_sample_bits=[float(b) for b in bits],
                    per_sample_grad_norm=[float(n) for n in _per_sample_norm(grad)],
                    step_norm=last_step,
                )
            )
            logger.debug(f"iteration {k}: {np.mean(bits):.4f} bits/dim")
        if k == steps:
            break
        moved = np.clip(x + lr * grad, lo, hi)
        last_step = float(np.max(_per_sample_norm(moved - x)))
        x = moved
    logger.info(
        f"Optimized {len(x)} samples for {steps} steps: "
        f"{records[0].nll_bits_per_dim:.4f} -> {records[-1].nll_bits_per_dim:.4f} bits/dim"
    )
    return records


def summarize_trajectory(records: Sequence[TrajectoryRecord]) -> TrajectorySummary:
    """Start/min/max/final NLL and whether it first rose above the start."""
    if not records:
        raise ValueError("no trajectory records to summarize")
    series = np.array([r.nll_bits_per_dim for r in records])
    peak = int(np.argmax(series))
    initial_increase = bool(series[peak] > series[0] and peak < len(series) - 1 and series[-1] < series[peak])
    return TrajectorySummary(
        start_bits=float(series[0]),
        min_bits=float(series.min()),
        max_bits=float(series.max()),
        final_bits=float(series[-1]),
        initial_increase=initial_increase,
    )


def _check_planar(model: ARModel) -> None:
    if model.event_shape != (2,):
        raise ShapeError(f"grid evaluation needs a 2-D model, got event shape {model.event_shape}")


def _map_chunks(fn, points: np.ndarray, chunk_size: int, workers: Optional[int]) -> np.ndarray:
    chunks = [points[i:i + chunk_size] for i in range(0, len(points), chunk_size)]
    workers = workers or settings.WORKERS
    if workers <= 1 or len(chunks) <= 1:
        return np.concatenate([fn(c) for c in chunks])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(fn, chunks)))


def gradient_field(
    model: ARModel,
    grid: Optional[GridSpec] = None,
    chunk_size: int = 2000,
    workers: Optional[int] = None,
) -> GradField:
    """||grad_x log p(x)|| at every grid point (rows along x2, columns along x1)."""
    _check_planar(model)
    grid = grid or GridSpec()

    def norms(points: np.ndarray) -> np.ndarray:
        _, grad = logprob_and_input_grad(model, points)
        return _per_sample_norm(grad)

    values = _map_chunks(norms, grid.points(), chunk_size, workers)
    return GradField(grid=grid, values=values.reshape(grid.ny, grid.nx))


def density_field(
    model: ARModel,
    grid: Optional[GridSpec] = None,
    chunk_size: int = 2000,
    workers: Optional[int] = None,
) -> DensityField:
    """Learned probability exp(log p(x)) at every grid point."""
    _check_planar(model)
    grid = grid or GridSpec()

    def probabilities(points: np.ndarray) -> np.ndarray:
        return np.exp(model.logprob(points).data)

    values = _map_chunks(probabilities, grid.points(), chunk_size, workers)
    return DensityField(grid=grid, values=values.reshape(grid.ny, grid.nx))


def probe_start_set(
    kind: str,
    n: int = 3,
    shape: tuple[int, ...] = (1, 28, 28),
    bins: Optional[BinSpec] = None,
    seed: int = 0,
    digits: Optional[Dataset] = None,
) -> np.ndarray:
    """Starting batch for image-domain optimization.

    Args:
        kind: One of digits, noise, black, gray, white.
        n: Batch size.
        shape: Per-image (C, H, W).
        bins: Pixel grid; 256 levels on [-1, 1] by default.
        seed: Seed for noise.
        digits: Test-set images, required for ``digits``.

    Raises:
        ValueError: On an unknown kind or missing digits.
    """
    bins = bins or BinSpec.image()
    if kind not in PROBE_KINDS:
        raise ValueError(f"unknown probe kind {kind!r}; expected one of {', '.join(PROBE_KINDS)}")
    if kind == "digits":
        if digits is None:
            raise ValueError("the digits probe needs a test set")
        if digits.event_shape != tuple(shape):
            raise ShapeError(f"digit images have shape {digits.event_shape}, expected {tuple(shape)}")
        return np.array(digits.examples[:n])
    if kind == "gray":
        return np.full((n,) + tuple(shape), bins.centers()[(bins.count - 1) // 2])
    return make_probe_images(kind, n, tuple(shape), seed=seed, bins=bins).examples
