"""Discretized likelihood heads and bits/dim accounting."""

from arbench.density.discretized import (
    DEFAULT_FLOOR_LOGPROB,
    bits_per_dim,
    discretized_gaussian_logpmf,
    discretized_logistic_mixture_logpmf,
    gaussian_bin_entropy,
    gaussian_bin_probabilities,
    gaussian_logpmf,
    logistic_logpmf,
    logistic_mixture_logpmf,
    mixture_bin_probabilities,
)

__all__ = [
    "DEFAULT_FLOOR_LOGPROB",
    "bits_per_dim",
    "discretized_gaussian_logpmf",
    "discretized_logistic_mixture_logpmf",
    "gaussian_bin_entropy",
    "gaussian_bin_probabilities",
    "gaussian_logpmf",
    "logistic_logpmf",
    "logistic_mixture_logpmf",
    "mixture_bin_probabilities",
]
