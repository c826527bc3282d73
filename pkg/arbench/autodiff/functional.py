"""Differentiable operations on Tensors.

Every function accepts Tensors, numpy arrays or Python numbers and records
on the active tape when one of its inputs is tracked.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from arbench.autodiff.tape import record
from arbench.autodiff.tensor import Tensor

Axis = Union[int, Sequence[int], None]


def add(a, b) -> Tensor:
    return record("add", (a, b))


def sub(a, b) -> Tensor:
    return record("sub", (a, b))


def mul(a, b) -> Tensor:
    return record("mul", (a, b))


def div(a, b) -> Tensor:
    return record("div", (a, b))


def neg(a) -> Tensor:
    return record("neg", (a,))


def matmul(a, b) -> Tensor:
    return record("matmul", (a, b))


def masked_matmul(x, w, mask: np.ndarray) -> Tensor:
    """``x @ (w * mask)``; the weight gradient is masked the same way."""
    return record("masked_matmul", (x, w), {"mask": np.asarray(mask, dtype=np.float64)})


def conv2d(x, w, bias=None, mask: Optional[np.ndarray] = None, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` (B, C, H, W) with ``w`` (O, C, kh, kw).

    Args:
        x: Input batch.
        w: Kernel bank.
        bias: Optional per-output-channel bias of shape (O,).
        mask: Binary kernel mask, either (kh, kw) or the full kernel shape.
        padding: Zero padding added on every spatial side.

    Returns:
        Tensor of shape (B, O, H + 2p - kh + 1, W + 2p - kw + 1).
    """
    inputs = (x, w) if bias is None else (x, w, bias)
    attrs = {"padding": int(padding)}
    if mask is not None:
        attrs["mask"] = np.asarray(mask, dtype=np.float64)
    return record("conv2d", inputs, attrs)


def tanh(a) -> Tensor:
    return record("tanh", (a,))


def sigmoid(a) -> Tensor:
    return record("sigmoid", (a,))


def relu(a) -> Tensor:
    return record("relu", (a,))


def exp(a) -> Tensor:
    return record("exp", (a,))


def log(a) -> Tensor:
    return record("log", (a,))


def softplus(a) -> Tensor:
    return record("softplus", (a,))


def absolute(a) -> Tensor:
    return record("abs", (a,))


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)``; no gradient where the floor is active."""
    return record("clamp_min", (a,), {"floor": float(floor)})


def gaussian_cdf(a) -> Tensor:
    return record("gaussian_cdf", (a,))


def logistic_cdf(a) -> Tensor:
    return record("logistic_cdf", (a,))


def log_softmax(a) -> Tensor:
    """Log-softmax over the last axis."""
    return record("log_softmax", (a,))


def logsumexp(a, axis: Axis = -1, keepdims: bool = False) -> Tensor:
    return record("logsumexp", (a,), {"axis": axis, "keepdims": keepdims})


def reduce_sum(a, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return record("sum", (a,), {"axis": axis, "keepdims": keepdims})


def reduce_mean(a, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return record("mean", (a,), {"axis": axis, "keepdims": keepdims})


def reshape(a, shape: Sequence[int]) -> Tensor:
    return record("reshape", (a,), {"shape": tuple(shape)})


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    return record("broadcast_to", (a,), {"shape": tuple(shape)})


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    return record("transpose", (a,), {"axes": None if axes is None else tuple(axes)})


def take(a, index) -> Tensor:
    """Basic (slice/int) indexing."""
    return record("slice", (a,), {"index": index})


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    return record("concat", tuple(tensors), {"axis": axis})


def pad(a, width: Sequence[tuple[int, int]], mode: str = "zero") -> Tensor:
    """Pad every axis by ``width[i] = (before, after)`` with zeros or by reflection."""
    return record("pad", (a,), {"width": tuple(tuple(p) for p in width), "mode": mode})


def square(a) -> Tensor:
    return mul(a, a)
