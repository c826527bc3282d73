"""Tests for discretized likelihood heads."""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import special

from arbench.autodiff import finite_diff_check
from arbench.autodiff import functional as F
from arbench.density.discretized import (
    bits_per_dim,
    discretized_gaussian_logpmf,
    discretized_logistic_mixture_logpmf,
    gaussian_bin_entropy,
    gaussian_logpmf,
    logistic_mixture_logpmf,
)
from arbench.models.bins import BinSpec, GaussianParams, LogisticMixtureParams


def test_bin_spec_grids():
    """Test the toy and image grids."""
    toy = BinSpec.toy()
    assert toy.count == 51
    assert toy.width == pytest.approx(0.2)
    assert toy.snap(0.04) == 0.0
    image = BinSpec.image()
    assert image.centers()[0] == -1.0
    assert image.centers()[-1] == pytest.approx(1.0)


def test_bin_spec_rejects_empty_range():
    """Test hi must exceed lo."""
    with pytest.raises(ValidationError):
        BinSpec(lo=1.0, hi=1.0, count=5)


def test_gaussian_mass_sums_to_one():
    """Test the discretized Gaussian normalizes over the bins."""
    bins = BinSpec.toy()
    centers = bins.centers()
    logp = gaussian_logpmf(centers, np.full(bins.count, 0.3), np.full(bins.count, math.log(0.7)), bins).data
    assert np.exp(logp).sum() == pytest.approx(1.0, abs=1e-6)


def test_gaussian_mass_at_centre_bin():
    """Test the centre-bin mass of a standard normal."""
    bins = BinSpec.toy()
    value = discretized_gaussian_logpmf(0.0, GaussianParams(mu=0.0, log_sigma=0.0), bins)
    expected = math.log(special.ndtr(0.1) - special.ndtr(-0.1))
    assert value == pytest.approx(expected, rel=1e-12)


def test_edge_bins_absorb_tails():
    """Test the top bin holds the whole upper tail."""
    bins = BinSpec.toy()
    value = discretized_gaussian_logpmf(5.0, GaussianParams(mu=0.0, log_sigma=0.0), bins)
    assert value == pytest.approx(math.log(special.ndtr(-4.9)), rel=1e-9)


def test_floor_applies_far_from_mode():
    """Test vanishing mass is floored at the configured log-probability."""
    bins = BinSpec.toy()
    value = discretized_gaussian_logpmf(4.0, GaussianParams(mu=0.0, log_sigma=math.log(0.01)), bins, floor_logprob=-30.0)
    assert value == pytest.approx(-30.0, abs=1e-9)


def test_interior_mass_follows_one_bin_shift():
    """Test shifting x and every location by one bin width leaves interior log-mass unchanged."""
    bins = BinSpec.toy()
    step = bins.width
    x = bins.centers()[15:35]
    mu = np.full(x.shape, 0.3)
    log_sigma = np.full(x.shape, math.log(0.7))
    base = gaussian_logpmf(x, mu, log_sigma, bins).data
    shifted = gaussian_logpmf(x + step, mu + step, log_sigma, bins).data
    np.testing.assert_allclose(shifted, base, rtol=0, atol=1e-9)

    shape = x.shape + (2,)
    logits = np.broadcast_to([0.4, -0.2], shape)
    locs = np.broadcast_to([-0.6, 0.9], shape)
    log_scale = np.broadcast_to([-0.5, -1.0], shape)
    base = logistic_mixture_logpmf(x, logits, locs, log_scale, bins).data
    shifted = logistic_mixture_logpmf(x + step, logits, locs + step, log_scale, bins).data
    np.testing.assert_allclose(shifted, base, rtol=0, atol=1e-9)

def test_gaussian_params_must_be_finite():
    """Test non-finite head parameters are rejected."""
    with pytest.raises(ValidationError):
        GaussianParams(mu=float("nan"), log_sigma=0.0)


def test_logistic_mixture_sums_to_one():
    """Test a three-component mixture normalizes over the bins."""
    bins = BinSpec(lo=-1.0, hi=1.0, count=32)
    centers = bins.centers()
    shape = (bins.count, 3)
    logits = np.broadcast_to([0.2, -1.0, 0.5], shape)
    mu = np.broadcast_to([-0.5, 0.1, 0.7], shape)
    log_scale = np.broadcast_to([-2.0, -1.5, -3.0], shape)
    logp = logistic_mixture_logpmf(centers, logits, mu, log_scale, bins).data
    assert np.exp(logp).sum() == pytest.approx(1.0, abs=1e-6)


def test_single_component_mixture_matches_logistic():
    """Test K=1 reduces to a plain discretized logistic."""
    bins = BinSpec.image()
    params = LogisticMixtureParams(logit_weights=[3.0], mu=[0.1], log_scale=[-3.0])
    x = bins.centers()[140]
    half = bins.width / 2
    expected = math.log(special.expit((x + half - 0.1) / math.exp(-3.0)) - special.expit((x - half - 0.1) / math.exp(-3.0)))
    assert discretized_logistic_mixture_logpmf(x, params, bins) == pytest.approx(expected, rel=1e-9)


def test_mixture_params_length_check():
    """Test mismatched component lists are rejected."""
    with pytest.raises(ValidationError):
        LogisticMixtureParams(logit_weights=[0.0, 0.0], mu=[0.0], log_scale=[0.0, 0.0])


def test_gaussian_logpmf_gradients():
    """Test gradients reach mu, log_sigma and an off-centre x."""
    bins = BinSpec.toy()
    x = np.array([0.03, -0.71, 1.38])
    mu = np.array([0.1, -0.5, 1.0])
    log_sigma = np.array([-0.3, 0.2, -1.0])
    assert finite_diff_check(lambda t: F.reduce_sum(gaussian_logpmf(x, t, log_sigma, bins)), mu) < 1e-4
    assert finite_diff_check(lambda t: F.reduce_sum(gaussian_logpmf(x, mu, t, bins)), log_sigma) < 1e-4
    assert finite_diff_check(lambda t: F.reduce_sum(gaussian_logpmf(t, mu, log_sigma, bins)), x) < 1e-4


def test_mixture_gradients():
    """Test mixture gradients with respect to logits and locations."""
    bins = BinSpec.image()
    x = np.array([0.2, -0.4])
    logits = np.array([[0.1, -0.3], [0.5, 0.2]])
    mu = np.array([[0.15, -0.2], [-0.35, 0.4]])
    log_scale = np.array([[-2.0, -1.0], [-1.5, -2.5]])
    assert finite_diff_check(lambda t: F.reduce_sum(logistic_mixture_logpmf(x, t, mu, log_scale, bins)), logits) < 1e-4
    assert finite_diff_check(lambda t: F.reduce_sum(logistic_mixture_logpmf(x, logits, t, log_scale, bins)), mu) < 1e-4


def test_bits_per_dim_conversion():
    """Test nats to bits per dimension."""
    assert bits_per_dim(4 * math.log(2.0), 4) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bits_per_dim(1.0, 0)


def test_gaussian_bin_entropy_matches_continuous_limit():
    """Test entropy of the discretized standard normal on the toy grid."""
    expected = 0.5 * math.log(2 * math.pi * math.e) - math.log(0.2)
    assert gaussian_bin_entropy(BinSpec.toy()) == pytest.approx(expected, abs=1e-2)
