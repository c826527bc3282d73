"""Central finite-difference check for tape gradients."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from arbench.autodiff.tape import Tape
from arbench.autodiff.tensor import Tensor


def finite_diff_check(
    fn: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-5,
    coordinates: Optional[Iterable[int]] = None,
) -> float:
    """Compare the tape gradient of ``fn`` with central differences.

    Args:
        fn: Maps a tensor to a scalar tensor.
        point: Where to evaluate (array-like or Tensor).
        step: Finite-difference step, must be positive.
        coordinates: Flat indices to check; all coordinates when omitted.

    Returns:
        Max over coordinates of |a - n| / (|a| + |n| + 1e-12).
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    with Tape() as tape:
        leaf = Tensor(base, requires_grad=True)
        value = fn(leaf)
        if tape.tracks(value):
            analytic = tape.backward(value).get(leaf, np.zeros(base.shape))
        else:
            analytic = np.zeros(base.shape)
    analytic = analytic.ravel()

    flat = base.ravel()
    indices = range(flat.size) if coordinates is None else coordinates
    worst = 0.0
    for i in indices:
        shifted = flat.copy()
        shifted[i] = flat[i] + step
        upper = fn(Tensor(shifted.reshape(base.shape))).item()
        shifted[i] = flat[i] - step
        lower = fn(Tensor(shifted.reshape(base.shape))).item()
        numeric = (upper - lower) / (2.0 * step)
        error = abs(analytic[i] - numeric) / (abs(analytic[i]) + abs(numeric) + 1e-12)
        worst = max(worst, error)
    return worst
