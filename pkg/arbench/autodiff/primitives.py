"""Primitive operations: forward rule plus vector-Jacobian product.

Each primitive takes input arrays and keyword attributes and returns the
output array together with a closure mapping the output cotangent to one
cotangent per input (``None`` for inputs that carry no gradient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from arbench.core.errors import DomainError, ShapeError

Vjp = Callable[[np.ndarray], tuple[Optional[np.ndarray], ...]]
Forward = Callable[..., tuple[np.ndarray, Vjp]]


@dataclass(frozen=True)
class Primitive:
    kind: str
    forward: Forward
    arity: Optional[int]  # None = variadic


PRIMITIVES: dict[str, Primitive] = {}

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def primitive(kind: str, arity: Optional[int] = 1):
    def register(fn: Forward) -> Forward:
        PRIMITIVES[kind] = Primitive(kind=kind, forward=fn, arity=arity)
        return fn
    return register


# --- shape helpers ---------------------------------------------------------

def broadcast_shape(kind: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    """Result shape for an elementwise binary op.

    Allowed: equal shapes, a scalar operand, or one shape being a suffix of
    the other (broadcast over leading batch dimensions).
    """
    if a.shape == b.shape:
        return a.shape
    if a.ndim == 0:
        return b.shape
    if b.ndim == 0:
        return a.shape
    big, small = (a, b) if a.ndim >= b.ndim else (b, a)
    if big.shape[big.ndim - small.ndim:] == small.shape:
        return big.shape
    raise ShapeError(
        f"{kind}: shapes {a.shape} and {b.shape} differ beyond leading batch dimensions"
    )


def reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a cotangent over the leading axes added by suffix broadcasting."""
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    return grad.reshape((-1,) + shape).sum(axis=0)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a cotangent back to ``shape`` under general numpy broadcasting."""
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _normalize_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    normalized = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-dimensional tensor")
        normalized.append(ax % ndim)
    return tuple(sorted(set(normalized)))


# --- elementwise binary ------------------------------------------------------

@primitive("add", arity=2)
def _add(a, b):
    broadcast_shape("add", a, b)
    return a + b, lambda g: (reduce_to(g, a.shape), reduce_to(g, b.shape))


@primitive("sub", arity=2)
def _sub(a, b):
    broadcast_shape("sub", a, b)
    return a - b, lambda g: (reduce_to(g, a.shape), reduce_to(-g, b.shape))


@primitive("mul", arity=2)
def _mul(a, b):
    broadcast_shape("mul", a, b)
    return a * b, lambda g: (reduce_to(g * b, a.shape), reduce_to(g * a, b.shape))


@primitive("div", arity=2)
def _div(a, b):
    broadcast_shape("div", a, b)
    if np.any(b == 0):
        raise DomainError("div: division by zero")
    out = a / b
    return out, lambda g: (reduce_to(g / b, a.shape), reduce_to(-g * out / b, b.shape))


# --- linear algebra ----------------------------------------------------------

def _check_matmul(kind: str, a: np.ndarray, w: np.ndarray) -> None:
    if a.ndim < 1 or w.ndim != 2:
        raise ShapeError(f"{kind}: expected a batch and a matrix, got shapes {a.shape} and {w.shape}")
    if a.shape[-1] != w.shape[0]:
        raise ShapeError(
            f"{kind}: inner extents differ, shapes {a.shape} and {w.shape}"
        )


@primitive("matmul", arity=2)
def _matmul(a, b):
    _check_matmul("matmul", a, b)
    out = a @ b

    def vjp(g):
        flat_a = a.reshape(-1, a.shape[-1])
        flat_g = g.reshape(-1, b.shape[1])
        return g @ b.T, flat_a.T @ flat_g

    return out, vjp


@primitive("masked_matmul", arity=2)
def _masked_matmul(x, w, mask):
    _check_matmul("masked_matmul", x, w)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != w.shape:
        raise ShapeError(f"masked_matmul: mask shape {mask.shape} does not match weight shape {w.shape}")
    effective = w * mask
    out = x @ effective

    def vjp(g):
        flat_x = x.reshape(-1, x.shape[-1])
        flat_g = g.reshape(-1, w.shape[1])
        return g @ effective.T, (flat_x.T @ flat_g) * mask

    return out, vjp


def _correlate(padded: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of (B, C, H, W) with (O, C, kh, kw)."""
    kh, kw = kernel.shape[2:]
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    out = np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


@primitive("conv2d", arity=None)
def _conv2d(x, w, *bias, mask=None, padding=0):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected (B,C,H,W) input and (O,C,kh,kw) kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels differ, shapes {x.shape} and {w.shape}")
    if bias and bias[0].shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {bias[0].shape} does not match kernel shape {w.shape}")
    if mask is None:
        mask = np.ones(w.shape)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape == w.shape[2:]:
        mask = np.broadcast_to(mask, w.shape)
    if mask.shape != w.shape:
        raise ShapeError(f"conv2d: mask shape {mask.shape} does not match kernel shape {w.shape}")
    kh, kw = w.shape[2:]
    pad = int(padding)
    if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    effective = w * mask
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = _correlate(padded, effective)
    if bias:
        out = out + bias[0][None, :, None, None]

    def vjp(g):
        windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])) * mask
        spread = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        flipped = effective[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        grad_padded = _correlate(spread, flipped)
        grad_x = grad_padded[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]]
        grads = (np.ascontiguousarray(grad_x), grad_w)
        if bias:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    return out, vjp


# --- elementwise unary -------------------------------------------------------

@primitive("neg")
def _neg(a):
    return -a, lambda g: (-g,)


@primitive("tanh")
def _tanh(a):
    out = np.tanh(a)
    return out, lambda g: (g * (1.0 - out * out),)


@primitive("sigmoid")
def _sigmoid(a):
    out = special.expit(a)
    return out, lambda g: (g * out * (1.0 - out),)


@primitive("relu")
def _relu(a):
    active = (a > 0).astype(np.float64)
    return a * active, lambda g: (g * active,)


@primitive("exp")
def _exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a)
    return out, lambda g: (g * out,)


@primitive("log")
def _log(a):
    if np.any(a <= 0):
        raise DomainError(f"log of non-positive value (min {a.min()!r})")
    return np.log(a), lambda g: (g / a,)


@primitive("softplus")
def _softplus(a):
    return np.logaddexp(0.0, a), lambda g: (g * special.expit(a),)


@primitive("abs")
def _abs(a):
    return np.abs(a), lambda g: (g * np.sign(a),)


@primitive("clamp_min")
def _clamp_min(a, floor):
    passed = (a > floor).astype(np.float64)
    return np.maximum(a, floor), lambda g: (g * passed,)


@primitive("gaussian_cdf")
def _gaussian_cdf(a):
    def vjp(g):
        with np.errstate(over="ignore", under="ignore"):
            density = np.exp(-0.5 * a * a) * _INV_SQRT_2PI
        return (g * density,)
    return special.ndtr(a), vjp


@primitive("logistic_cdf")
def _logistic_cdf(a):
    out = special.expit(a)
    return out, lambda g: (g * out * (1.0 - out),)


# --- normalizers and reductions ---------------------------------------------

@primitive("log_softmax")
def _log_softmax(a):
    if a.ndim == 0:
        raise ShapeError("log_softmax needs at least one axis")
    out = a - special.logsumexp(a, axis=-1, keepdims=True)
    probs = np.exp(out)
    return out, lambda g: (g - probs * g.sum(axis=-1, keepdims=True),)


@primitive("logsumexp")
def _logsumexp(a, axis=-1, keepdims=False):
    axes = _normalize_axis(axis, a.ndim)
    kept = special.logsumexp(a, axis=axes, keepdims=True)
    out = kept if keepdims else np.squeeze(kept, axis=axes)

    def vjp(g):
        g_kept = g if keepdims else np.expand_dims(g, axes)
        return (g_kept * np.exp(a - kept),)

    return np.asarray(out), vjp


@primitive("sum")
def _sum(a, axis=None, keepdims=False):
    axes = _normalize_axis(axis, a.ndim)
    out = np.asarray(a.sum(axis=axes, keepdims=keepdims))

    def vjp(g):
        g_kept = g if keepdims else np.expand_dims(g, axes)
        return (np.array(np.broadcast_to(g_kept, a.shape)),)

    return out, vjp


@primitive("mean")
def _mean(a, axis=None, keepdims=False):
    axes = _normalize_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = np.asarray(a.mean(axis=axes, keepdims=keepdims))

    def vjp(g):
        g_kept = g if keepdims else np.expand_dims(g, axes)
        return (np.array(np.broadcast_to(g_kept / count, a.shape)),)

    return out, vjp


# --- structural ----------------------------------------------------------------

@primitive("reshape")
def _reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size or any(s <= 0 for s in shape):
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}")
    return a.reshape(shape), lambda g: (g.reshape(a.shape),)


@primitive("broadcast_to")
def _broadcast_to(a, shape):
    shape = tuple(int(s) for s in shape)
    try:
        out = np.array(np.broadcast_to(a, shape))
    except ValueError as e:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from e
    return out, lambda g: (unbroadcast(g, a.shape),)


@primitive("transpose")
def _transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of the axes of {a.shape}")
    inverse = tuple(np.argsort(axes))
    return np.ascontiguousarray(a.transpose(axes)), lambda g: (g.transpose(inverse),)


@primitive("slice")
def _slice(a, index):
    if not isinstance(index, tuple):
        index = (index,)
    for part in index:
        if not isinstance(part, (int, slice, np.integer)) and part is not Ellipsis:
            raise ShapeError(f"slice: only basic indexing is supported, got {type(part).__name__}")
    try:
        out = np.array(a[index])
    except IndexError as e:
        raise ShapeError(f"slice: {e} for shape {a.shape}") from e
    if out.ndim and 0 in out.shape:
        raise ShapeError(f"slice: index {index} selects nothing from shape {a.shape}")

    def vjp(g):
        grad = np.zeros(a.shape)
        grad[index] = g
        return (grad,)

    return out, vjp


@primitive("concat", arity=None)
def _concat(*arrays, axis=0):
    first = arrays[0]
    for other in arrays[1:]:
        if other.ndim != first.ndim or any(
            i != axis % first.ndim and s != t for i, (s, t) in enumerate(zip(first.shape, other.shape))
        ):
            raise ShapeError(f"concat: shapes {first.shape} and {other.shape} differ off axis {axis}")
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, bounds, axis=axis))


@primitive("pad")
def _pad(a, width: Sequence[tuple[int, int]], mode: str = "zero"):
    width = [tuple(int(v) for v in pair) for pair in width]
    if len(width) != a.ndim:
        raise ShapeError(f"pad: {len(width)} pad pairs for a {a.ndim}-dimensional tensor")
    if mode == "zero":
        out = np.pad(a, width)
        crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(width, a.shape))
        return out, lambda g: (np.array(g[crop]),)
    if mode != "reflect":
        raise ValueError(f"pad: unknown mode {mode!r}")
    gathers = []
    out = a
    for ax, (lo, hi) in enumerate(width):
        if lo == 0 and hi == 0:
            continue
        extent = out.shape[ax]
        if extent == 0:
            raise ShapeError(f"pad: cannot reflect an empty axis {ax}")
        # Widths past the extent fold back and forth.
        index = np.pad(np.arange(extent), (lo, hi), mode="reflect")
        gathers.append((ax, index, extent))
        out = np.take(out, index, axis=ax)

    def vjp(g):
        for ax, index, extent in reversed(gathers):
            shape = list(g.shape)
            shape[ax] = extent
            folded = np.zeros(shape)
            selector = (slice(None),) * ax + (index,)
            np.add.at(folded, selector, g)
            g = folded
        return (g,)

    return out, vjp
