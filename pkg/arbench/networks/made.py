"""MADE: masked MLP with a discretized Gaussian head per input dimension."""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from arbench.autodiff import functional as F
from arbench.autodiff.tensor import Tensor
from arbench.core.errors import ShapeError
from arbench.density.discretized import gaussian_bin_probabilities, gaussian_logpmf
from arbench.models.configs import MadeConfig
from arbench.networks.base import ARModel, Params, normal_init

logger = logging.getLogger(__name__)


def build_made_masks(
    layer_sizes: Sequence[int],
    ordering: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> list[np.ndarray]:
    """Connectivity masks enforcing the autoregressive property.

    Ranks are 0-based: input ``d`` gets rank ``ordering.index(d)``. Each
    hidden unit draws an integer m uniformly from [min rank of the previous
    layer, D - 2]; hidden connections need m(out) >= m(in), output
    connections need rank(out) > m(in).

    Args:
        layer_sizes: [D, hidden..., D]; the last entry is the number of head groups.
        ordering: Permutation of 0..D-1; natural order when omitted.
        seed: Seed for the hidden connectivity draw.

    Returns:
        One (fan_in, fan_out) binary matrix per weight layer.

    Raises:
        ValueError: If ``ordering`` is not a permutation or sizes are inconsistent.
    """
    if len(layer_sizes) < 2:
        raise ValueError(f"need at least input and output sizes, got {list(layer_sizes)}")
    dims = layer_sizes[0]
    if layer_sizes[-1] != dims:
        raise ValueError(f"output groups ({layer_sizes[-1]}) must equal input dims ({dims})")
    order = list(range(dims)) if ordering is None else [int(i) for i in ordering]
    if sorted(order) != list(range(dims)):
        raise ValueError(f"ordering {order} is not a permutation of 0..{dims - 1}")

    rng = np.random.default_rng(seed)
    rank = np.empty(dims, dtype=np.int64)
    rank[order] = np.arange(dims)

    degrees = [rank]
    for width in layer_sizes[1:-1]:
        low = int(degrees[-1].min())
        high = max(low, dims - 2)
        degrees.append(rng.integers(low, high + 1, size=width))

    masks = []
    for previous, current in zip(degrees[:-1], degrees[1:]):
        masks.append((current[None, :] >= previous[:, None]).astype(np.float64))
    masks.append((rank[None, :] > degrees[-1][:, None]).astype(np.float64))
    return masks


class MadeModel(ARModel):
    """MADE over D-dimensional vectors.

    The head emits (mu, log_sigma) for every dimension; output unit d is
    masked by the rank of input dimension d.
    """

    kind = "made"

    def __init__(self, config: Optional[MadeConfig] = None):
        config = config or MadeConfig()
        super().__init__(
            config,
            event_shape=(config.dims,),
            bins=config.bins,
            floor_logprob=config.floor_logprob,
            zero_mass_policy=config.zero_mass_policy,
        )
        self.ordering = list(range(config.dims)) if config.ordering is None else list(config.ordering)
        sizes = [config.dims, *config.hidden_sizes, config.dims]
        self.masks = build_made_masks(sizes, self.ordering, config.seed)
        # Output mask is shared by the mu and log_sigma halves of the head.
        self.masks[-1] = np.concatenate([self.masks[-1], self.masks[-1]], axis=1)

        rng = np.random.default_rng(config.seed + 1)
        fan = [config.dims, *config.hidden_sizes]
        for i, (fan_in, fan_out) in enumerate(zip(fan[:-1], fan[1:])):
            self._init_param(f"hidden.{i}.weight", normal_init(rng, (fan_in, fan_out), fan_in))
            self._init_param(f"hidden.{i}.bias", np.zeros(fan_out))
        head_shape = (fan[-1], 2 * config.dims)
        if config.zero_init_head:
            head = np.zeros(head_shape)
        else:
            head = normal_init(rng, head_shape, fan[-1])
        self._init_param("head.weight", head)
        self._init_param("head.bias", np.zeros(2 * config.dims))
        logger.debug(f"Built MADE with layer sizes {sizes} and ordering {self.ordering}")

    def conditionals(self, x, params: Optional[Params] = None) -> tuple[Tensor, Tensor]:
        """Head outputs (mu, log_sigma), each of shape (B, D)."""
        p = self.resolve(params)
        x = self.check_input(x)
        h = x
        for i in range(len(self.config.hidden_sizes)):
            h = F.tanh(F.add(F.masked_matmul(h, p[f"hidden.{i}.weight"], self.masks[i]), p[f"hidden.{i}.bias"]))
        out = F.add(F.masked_matmul(h, p["head.weight"], self.masks[-1]), p["head.bias"])
        dims = self.config.dims
        return F.take(out, (slice(None), slice(0, dims))), F.take(out, (slice(None), slice(dims, 2 * dims)))

    def dimension_logprobs(self, x, params: Optional[Params] = None) -> Tensor:
        x = self.check_input(x)
        mu, log_sigma = self.conditionals(x, params)
        return gaussian_logpmf(x, mu, log_sigma, self.bins, self.floor_logprob)

    def sample(self, n: int, seed: int) -> np.ndarray:
        """Draw each dimension in ordering sequence by inverse CDF over bin masses."""
        if n < 1:
            raise ValueError(f"n must be at least 1, got {n}")
        rng = np.random.default_rng(seed)
        centers = self.bins.centers()
        x = np.full((n, self.config.dims), centers[(self.bins.count - 1) // 2])
        for d in self.ordering:
            mu, log_sigma = self.conditionals(x)
            probs = gaussian_bin_probabilities(mu.data[:, d], log_sigma.data[:, d], self.bins, self.floor_logprob)
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(n)
            index = np.minimum((u[:, None] > cdf).sum(axis=1), self.bins.count - 1)
            x[:, d] = centers[index]
        return x


def path_matrix(masks: Sequence[np.ndarray], dims: int) -> np.ndarray:
    """Boolean (D, D) reachability from input j to output group i via the masks."""
    reach = masks[0] > 0
    for mask in masks[1:]:
        reach = (reach.astype(np.int64) @ (mask > 0).astype(np.int64)) > 0
    if reach.shape[1] % dims:
        raise ShapeError(f"output width {reach.shape[1]} is not a multiple of {dims}")
    groups = reach.shape[1] // dims
    return np.any(reach.reshape(dims, groups, dims), axis=1).T
