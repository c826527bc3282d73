"""Parameter handling shared by every network, and the AR model interface."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import ClassVar, Mapping, Optional

import numpy as np
from pydantic import BaseModel

from arbench.autodiff import functional as F
from arbench.autodiff.tensor import Tensor, as_tensor
from arbench.core.errors import ShapeError
from arbench.density.discretized import LN2
from arbench.models.bins import BinSpec
from arbench.models.configs import ZeroMassPolicy

logger = logging.getLogger(__name__)

Params = Mapping[str, Tensor]


def normal_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, gain / np.sqrt(max(fan_in, 1)), size=shape)


class ParametricModule:
    """Named float64 parameters, frozen between training steps.

    ``parameters()`` returns constant tensors; ``trainable()`` returns fresh
    grad-requiring leaves over the same values for one forward pass.
    """

    kind: ClassVar[str] = "module"

    def __init__(self, config: BaseModel):
        self.config = config
        self._params: dict[str, Tensor] = {}

    def _init_param(self, name: str, value: np.ndarray) -> None:
        self._params[name] = Tensor(value, name=name)

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def trainable(self) -> dict[str, Tensor]:
        return {name: Tensor(t.data, requires_grad=True, name=name) for name, t in self._params.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def set_parameters(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Replace parameter values; names and shapes must match exactly."""
        if set(arrays) != set(self._params):
            missing = sorted(set(self._params) - set(arrays))
            extra = sorted(set(arrays) - set(self._params))
            raise ShapeError(f"parameter names differ: missing {missing}, unexpected {extra}")
        updated = {}
        for name, value in arrays.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self._params[name].shape:
                raise ShapeError(
                    f"parameter {name}: shape {value.shape} does not match {self._params[name].shape}"
                )
            updated[name] = Tensor(value, name=name)
        self._params = updated

    def resolve(self, params: Optional[Params]) -> Params:
        return self._params if params is None else params

    def fingerprint(self) -> dict[str, bytes]:
        """Raw parameter bytes, for bitwise comparisons."""
        return {name: t.data.tobytes() for name, t in self._params.items()}

    def parameter_count(self) -> int:
        return sum(t.size for t in self._params.values())


class ARModel(ParametricModule, ABC):
    """Autoregressive density over a fixed event shape.

    Subclasses provide per-dimension conditional log-masses; this class
    sums them and applies the zero-mass policy.
    """

    def __init__(
        self,
        config: BaseModel,
        event_shape: tuple[int, ...],
        bins: BinSpec,
        floor_logprob: float,
        zero_mass_policy: ZeroMassPolicy,
    ):
        super().__init__(config)
        self.event_shape = tuple(event_shape)
        self.bins = bins
        self.floor_logprob = floor_logprob
        self.zero_mass_policy = ZeroMassPolicy(zero_mass_policy)

    @property
    def dims(self) -> int:
        return int(np.prod(self.event_shape))

    def check_input(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[1:] != self.event_shape or x.ndim != len(self.event_shape) + 1:
            raise ShapeError(
                f"{self.kind}: input shape {x.shape} does not match (batch,) + {self.event_shape}"
            )
        return x

    @abstractmethod
    def dimension_logprobs(self, x, params: Optional[Params] = None) -> Tensor:
        """Conditional log-mass of every coordinate, shape (B,) + event_shape."""

    @abstractmethod
    def sample(self, n: int, seed: int) -> np.ndarray:
        """Ancestral samples on bin centres, shape (n,) + event_shape."""

    def logprob(self, x, params: Optional[Params] = None) -> Tensor:
        """Per-example log-probability in nats, shape (B,)."""
        x = self.check_input(x)
        per_dim = self.dimension_logprobs(x, params)
        axes = tuple(range(1, per_dim.ndim))
        total = F.reduce_sum(per_dim, axis=axes)
        if self.zero_mass_policy == ZeroMassPolicy.JOINT:
            floored = np.any(per_dim.data <= self.floor_logprob + 1e-9, axis=axes).astype(np.float64)
            if floored.any():
                total = F.add(F.mul(total, 1.0 - floored), floored * (self.dims * self.floor_logprob))
        return total

    def nll_bits_per_dim(self, x, params: Optional[Params] = None) -> np.ndarray:
        """Per-example NLL in bits per dimension."""
        return -self.logprob(x, params).data / (self.dims * LN2)


class UniformARModel(ARModel):
    """Every coordinate uniform over the bins, regardless of context."""

    kind = "uniform"

    def __init__(self, event_shape: tuple[int, ...], bins: BinSpec):
        super().__init__(None, event_shape, bins, floor_logprob=-40.0, zero_mass_policy=ZeroMassPolicy.PER_DIM)

    def dimension_logprobs(self, x, params: Optional[Params] = None) -> Tensor:
        x = self.check_input(x)
        return Tensor._wrap(np.full(x.shape, -np.log(self.bins.count)))

    def logprob(self, x, params: Optional[Params] = None) -> Tensor:
        x = self.check_input(x)
        return Tensor._wrap(np.full(x.shape[0], -self.dims * np.log(self.bins.count)))

    def sample(self, n: int, seed: int) -> np.ndarray:
        if n < 1:
            raise ValueError(f"n must be at least 1, got {n}")
        rng = np.random.default_rng(seed)
        levels = rng.integers(self.bins.count, size=(n,) + self.event_shape)
        return self.bins.from_levels(levels)
