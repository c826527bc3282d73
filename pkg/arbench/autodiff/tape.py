"""Define-by-run tape for reverse-mode differentiation.

A tape is rebuilt for every forward pass. It is active for the current
thread inside ``with Tape() as tape:``; independent tapes on independent
threads never interact.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from arbench.autodiff.primitives import PRIMITIVES, Vjp
from arbench.autodiff.tensor import Tensor, as_tensor
from arbench.core.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

_local = threading.local()


@dataclass
class Node:
    """One recorded primitive application."""
    op_kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    attrs: dict[str, Any] = field(default_factory=dict)
    vjp: Optional[Vjp] = None


def _stack() -> list["Tape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional["Tape"]:
    """The innermost tape entered on this thread, if any."""
    stack = _stack()
    return stack[-1] if stack else None


def evaluate(op_kind: str, inputs: Sequence[Tensor], attrs: Optional[dict] = None):
    """Run a primitive forward rule and check the result is finite."""
    if op_kind not in PRIMITIVES:
        raise ValueError(f"unknown op kind {op_kind!r}")
    prim = PRIMITIVES[op_kind]
    if prim.arity is not None and len(inputs) != prim.arity:
        raise ValueError(f"{op_kind} takes {prim.arity} inputs, got {len(inputs)}")
    arrays = [t.data for t in inputs]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out, vjp = prim.forward(*arrays, **(attrs or {}))
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op_kind} produced non-finite values")
    return out, vjp


class Tape:
    """Append-only record of primitive operations.

    Nodes are stored in execution order, so every node's inputs precede it.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def tracks(self, tensor: Tensor) -> bool:
        """True if gradients can flow through ``tensor`` on this tape."""
        return tensor._tape is self or (tensor.requires_grad and tensor._tape is None)

    def record(self, op_kind: str, inputs: Sequence[Any], attrs: Optional[dict] = None) -> Tensor:
        """Apply ``op_kind`` to ``inputs`` and append the node.

        Raises:
            ShapeError: If the input shapes do not conform to the op.
            DomainError: If an input lies outside the op's domain.
            NonFiniteError: If the output contains NaN or infinities.
        """
        tensors = tuple(as_tensor(t) for t in inputs)
        # Outputs of other tapes enter as constants.
        for t in tensors:
            if t.requires_grad and t._tape is None:
                self._leaves.setdefault(id(t), t)
        out_array, vjp = evaluate(op_kind, tensors, attrs)
        output = Tensor._wrap(out_array, tape=self, node_index=len(self.nodes))
        self.nodes.append(Node(op_kind, tensors, output, dict(attrs or {}), vjp))
        return output

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Reverse pass from a scalar loss.

        Args:
            loss: Scalar tensor recorded on this tape, or a grad-requiring leaf.

        Returns:
            Map from every grad-requiring leaf used on this tape to its gradient.

        Raises:
            ShapeError: If ``loss`` is not a scalar.
        """
        if loss.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[Tensor, np.ndarray] = {t: np.zeros(t.shape) for t in self._leaves.values()}
        if loss._tape is None:
            if loss.requires_grad:
                grads[loss] = np.ones(())
                return grads
            raise ValueError("loss was not produced on this tape")
        if loss._tape is not self:
            raise ValueError("loss was produced on a different tape")

        pending: dict[int, np.ndarray] = {id(loss): np.ones(())}
        for node in reversed(self.nodes[: loss._node_index + 1]):
            upstream = pending.pop(id(node.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(node.inputs, node.vjp(upstream)):
                if grad is None:
                    continue
                if tensor._tape is self:
                    key = id(tensor)
                    pending[key] = pending[key] + grad if key in pending else grad
                elif tensor.requires_grad:
                    grads[tensor] = grads[tensor] + grad
        return grads


def record(op_kind: str, inputs: Sequence[Any], attrs: Optional[dict] = None) -> Tensor:
    """Apply an op, recording it on the active tape when an input is tracked."""
    tensors = tuple(as_tensor(t) for t in inputs)
    tape = active_tape()
    if tape is not None and any(tape.tracks(t) for t in tensors):
        return tape.record(op_kind, tensors, attrs)
    out_array, _ = evaluate(op_kind, tensors, attrs)
    return Tensor._wrap(out_array)


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    return tape.backward(loss)
