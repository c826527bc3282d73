"""Reverse-mode automatic differentiation over float64 tensors."""

from arbench.autodiff.gradcheck import finite_diff_check
from arbench.autodiff.tape import Tape, active_tape, backward, record
from arbench.autodiff.tensor import Tensor, as_tensor

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "as_tensor",
    "backward",
    "finite_diff_check",
    "record",
]
