"""Discretized Gaussian and logistic-mixture heads.

The mass of the bin around ``x`` is the CDF difference over the window
[x - width/2, x + width/2]. For ``x`` on a bin centre this is the exact bin
mass; elsewhere it is a continuous relaxation, which is what lets gradients
reach ``x``. The bin that ``x`` snaps to decides whether a window edge is
open: the lowest bin has no lower edge and the highest has no upper edge.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from arbench.autodiff import functional as F
from arbench.autodiff.tensor import Tensor, as_tensor
from arbench.core.errors import DomainError, ShapeError
from arbench.models.bins import BinSpec, GaussianParams, LogisticMixtureParams

DEFAULT_FLOOR_LOGPROB = -40.0

# Stand-in for an infinite edge; Phi and the logistic CDF saturate long before it.
OPEN_EDGE = 1e6

LN2 = math.log(2.0)


def _window_mass(cdf, x: Tensor, loc: Tensor, log_scale: Tensor, bins: BinSpec) -> Tensor:
    if not (x.shape == loc.shape == log_scale.shape):
        raise ShapeError(f"x {x.shape}, loc {loc.shape} and log_scale {log_scale.shape} must agree")
    half = bins.width / 2.0
    inv_scale = F.exp(F.neg(log_scale))
    centered = F.sub(x, loc)
    z_hi = F.mul(F.add(centered, half), inv_scale)
    z_lo = F.mul(F.sub(centered, half), inv_scale)

    index = bins.bin_index(x.data)
    open_lo = (index == 0).astype(np.float64)
    open_hi = (index == bins.count - 1).astype(np.float64)
    z_lo = F.sub(F.mul(z_lo, 1.0 - open_lo), OPEN_EDGE * open_lo)
    z_hi = F.add(F.mul(z_hi, 1.0 - open_hi), OPEN_EDGE * open_hi)

    # Take the difference in whichever tail is smaller.
    sign = np.where(centered.data > 0, 1.0, -1.0)
    upper_tail = cdf(F.mul(z_lo, -sign))
    lower_tail = cdf(F.mul(z_hi, -sign))
    return F.mul(F.sub(upper_tail, lower_tail), sign)


def _floored_log(mass: Tensor, floor_logprob: float) -> Tensor:
    if floor_logprob >= 0:
        raise DomainError(f"floor log-probability must be negative, got {floor_logprob}")
    return F.log(F.clamp_min(mass, math.exp(floor_logprob)))


def gaussian_logpmf(x, mu, log_sigma, bins: BinSpec, floor_logprob: float = DEFAULT_FLOOR_LOGPROB) -> Tensor:
    """Elementwise discretized Gaussian log-mass; all operands share one shape."""
    mass = _window_mass(F.gaussian_cdf, as_tensor(x), as_tensor(mu), as_tensor(log_sigma), bins)
    return _floored_log(mass, floor_logprob)


def logistic_logpmf(x, mu, log_scale, bins: BinSpec, floor_logprob: float = DEFAULT_FLOOR_LOGPROB) -> Tensor:
    mass = _window_mass(F.logistic_cdf, as_tensor(x), as_tensor(mu), as_tensor(log_scale), bins)
    return _floored_log(mass, floor_logprob)


def logistic_mixture_logpmf(
    x,
    logits,
    mu,
    log_scale,
    bins: BinSpec,
    floor_logprob: float = DEFAULT_FLOOR_LOGPROB,
) -> Tensor:
    """Discretized logistic mixture log-mass.

    Args:
        x: Values of shape S.
        logits: Unnormalized component log-weights of shape S + (K,).
        mu: Component locations, shape S + (K,).
        log_scale: Component log scales, shape S + (K,).
        bins: The discretization grid.
        floor_logprob: Per-component mass floor in nats.

    Returns:
        Tensor of shape S.
    """
    x, logits, mu, log_scale = (as_tensor(v) for v in (x, logits, mu, log_scale))
    if logits.shape != x.shape + logits.shape[-1:] or mu.shape != logits.shape or log_scale.shape != logits.shape:
        raise ShapeError(
            f"mixture parameters {logits.shape}, {mu.shape}, {log_scale.shape} do not extend x {x.shape}"
        )
    expanded = F.broadcast_to(F.reshape(x, x.shape + (1,)), logits.shape)
    component = logistic_logpmf(expanded, mu, log_scale, bins, floor_logprob)
    return F.logsumexp(F.add(F.log_softmax(logits), component), axis=-1)


def discretized_gaussian_logpmf(
    x: float,
    params: GaussianParams,
    bins: BinSpec,
    floor_logprob: float = DEFAULT_FLOOR_LOGPROB,
) -> float:
    """Log-mass of the bin around a scalar ``x`` under a discretized Gaussian."""
    value = gaussian_logpmf(np.float64(x), np.float64(params.mu), np.float64(params.log_sigma), bins, floor_logprob)
    return value.item()


def discretized_logistic_mixture_logpmf(
    x: float,
    params: LogisticMixtureParams,
    bins: BinSpec,
    floor_logprob: float = DEFAULT_FLOOR_LOGPROB,
) -> float:
    value = logistic_mixture_logpmf(
        np.float64(x),
        np.asarray(params.logit_weights, dtype=np.float64),
        np.asarray(params.mu, dtype=np.float64),
        np.asarray(params.log_scale, dtype=np.float64),
        bins,
        floor_logprob,
    )
    return value.item()


def bits_per_dim(total_nll_nats, dims: int):
    """Convert a total NLL in nats to bits per dimension."""
    if dims < 1:
        raise ValueError(f"dims must be at least 1, got {dims}")
    return total_nll_nats / (dims * LN2)


def gaussian_bin_probabilities(mu, log_sigma, bins: BinSpec, floor_logprob: float = DEFAULT_FLOOR_LOGPROB) -> np.ndarray:
    """Mass of every bin for each (mu, log_sigma) pair, shape (n, count), rows normalized."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 1)
    log_sigma = np.asarray(log_sigma, dtype=np.float64).reshape(-1, 1)
    grid = np.broadcast_to(bins.centers(), (len(mu), bins.count))
    logp = gaussian_logpmf(
        grid, np.broadcast_to(mu, grid.shape), np.broadcast_to(log_sigma, grid.shape), bins, floor_logprob
    ).data
    probs = np.exp(logp)
    return probs / probs.sum(axis=1, keepdims=True)


def mixture_bin_probabilities(logits, mu, log_scale, bins: BinSpec, floor_logprob: float = DEFAULT_FLOOR_LOGPROB) -> np.ndarray:
    """Mass of every bin for each mixture, inputs (n, K), output (n, count)."""
    logits, mu, log_scale = (np.asarray(v, dtype=np.float64) for v in (logits, mu, log_scale))
    n, k = logits.shape
    shape = (n, bins.count, k)
    grid = np.broadcast_to(bins.centers(), (n, bins.count))
    logp = logistic_mixture_logpmf(
        grid,
        np.broadcast_to(logits[:, None, :], shape),
        np.broadcast_to(mu[:, None, :], shape),
        np.broadcast_to(log_scale[:, None, :], shape),
        bins,
        floor_logprob,
    ).data
    probs = np.exp(logp)
    return probs / probs.sum(axis=1, keepdims=True)


def gaussian_bin_entropy(bins: BinSpec, mu: float = 0.0, sigma: float = 1.0) -> float:
    """Entropy in nats of a discretized Gaussian, by direct summation over bins."""
    inner_edges = bins.centers()[:-1] + bins.width / 2.0
    cdf = np.concatenate([[0.0], special.ndtr((inner_edges - mu) / sigma), [1.0]])
    return float(np.sum(special.entr(np.diff(cdf))))
