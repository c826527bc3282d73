"""Dense float64 tensors.

A Tensor is an immutable value. It is either a leaf (built directly, and
optionally marked ``requires_grad``) or the output of a node recorded on a
``Tape``. Tensors hash by identity so they can key gradient maps.
"""

from __future__ import annotations

from typing import Any, Optional, Sequence, Union

import numpy as np

from arbench.core.errors import NonFiniteError, ShapeError


class Tensor:
    """Immutable n-dimensional array of 64-bit floats."""

    __slots__ = ("data", "requires_grad", "name", "_tape", "_node_index", "__weakref__")

    # ndarray op Tensor dispatches to the Tensor reflected operator
    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        if array.ndim and 0 in array.shape:
            raise ShapeError(f"tensor extents must be positive, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NonFiniteError("tensor data contains NaN or infinite values")
        array.setflags(write=False)
        self.data = array
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None
        self._node_index = -1

    @classmethod
    def _wrap(cls, array: np.ndarray, tape=None, node_index: int = -1) -> "Tensor":
        """Build a tensor around a freshly computed array without copying."""
        tensor = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        array.setflags(write=False)
        tensor.data = array
        tensor.requires_grad = False
        tensor.name = None
        tensor._tape = tape
        tensor._node_index = node_index
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant tensor sharing this tensor's data."""
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # Operators delegate to the functional layer so they record on the active tape.

    def __add__(self, other):
        from arbench.autodiff import functional as F
        return F.add(self, other)

    def __radd__(self, other):
        from arbench.autodiff import functional as F
        return F.add(other, self)

    def __sub__(self, other):
        from arbench.autodiff import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from arbench.autodiff import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from arbench.autodiff import functional as F
        return F.mul(self, other)

    def __rmul__(self, other):
        from arbench.autodiff import functional as F
        return F.mul(other, self)

    def __truediv__(self, other):
        from arbench.autodiff import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from arbench.autodiff import functional as F
        return F.div(other, self)

    def __neg__(self):
        from arbench.autodiff import functional as F
        return F.neg(self)

    def __matmul__(self, other):
        from arbench.autodiff import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from arbench.autodiff import functional as F
        return F.take(self, index)

    def sum(self, axis: Union[int, Sequence[int], None] = None, keepdims: bool = False) -> "Tensor":
        from arbench.autodiff import functional as F
        return F.reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Union[int, Sequence[int], None] = None, keepdims: bool = False) -> "Tensor":
        from arbench.autodiff import functional as F
        return F.reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        from arbench.autodiff import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


def as_tensor(value: Any) -> Tensor:
    """Return ``value`` unchanged if it is a Tensor, else wrap it as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)
