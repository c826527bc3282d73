"""Tests for the MADE density model."""

import itertools
import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import special, stats

from arbench.core.errors import ShapeError
from arbench.density.discretized import gaussian_bin_probabilities
from arbench.experiments.sample_opt import density_field, gradient_field
from arbench.experiments.training import parameter_gradient_check
from arbench.models.bins import BinSpec
from arbench.models.configs import GridSpec, MadeConfig, ZeroMassPolicy
from arbench.networks.made import MadeModel, build_made_masks, path_matrix


def _random_made(**overrides):
    config = MadeConfig(dims=3, hidden_sizes=[12, 12], zero_init_head=False, seed=4, **overrides)
    return MadeModel(config)


def test_masks_are_autoregressive():
    """Test output i only sees inputs ranked before it."""
    ordering = [2, 0, 3, 1]
    masks = build_made_masks([4, 16, 16, 4], ordering, seed=0)
    reach = path_matrix(masks, 4)
    rank = {d: r for r, d in enumerate(ordering)}
    for i, j in itertools.product(range(4), range(4)):
        if reach[i, j]:
            assert rank[j] < rank[i]
    first = ordering[0]
    assert not reach[first].any()


def test_masks_reject_bad_ordering():
    """Test a non-permutation ordering is refused."""
    with pytest.raises(ValueError):
        build_made_masks([3, 8, 3], [0, 0, 1])
    with pytest.raises(ValidationError):
        MadeConfig(dims=3, ordering=[0, 1, 1])


def test_conditionals_ignore_later_dimensions():
    """Test perturbing later-ranked inputs leaves earlier conditionals bitwise unchanged."""
    model = _random_made(ordering=[1, 2, 0])
    rng = np.random.default_rng(0)
    x = model.bins.snap(rng.normal(size=(5, 3)))
    mu, log_sigma = model.conditionals(x)
    perturbed = x.copy()
    perturbed[:, 0] = model.bins.snap(rng.normal(size=5))
    mu_p, log_sigma_p = model.conditionals(perturbed)
    for d in (1, 2):
        np.testing.assert_array_equal(mu.data[:, d], mu_p.data[:, d])
        np.testing.assert_array_equal(log_sigma.data[:, d], log_sigma_p.data[:, d])


def test_zero_init_head_is_standard_normal():
    """Test the zero-initialized head gives N(0, 1) conditionals."""
    model = MadeModel(MadeConfig(dims=2, hidden_sizes=[8]))
    logp = model.logprob(np.zeros((1, 2))).item()
    expected = 2 * math.log(special.ndtr(0.1) - special.ndtr(-0.1))
    assert logp == pytest.approx(expected, rel=1e-12)


def test_joint_probability_sums_to_one():
    """Test exp(log p) sums to one over every bin pair."""
    model = MadeModel(
        MadeConfig(dims=2, hidden_sizes=[10], zero_init_head=False, seed=2, zero_mass_policy=ZeroMassPolicy.PER_DIM)
    )
    centers = model.bins.centers()
    grid = np.array(list(itertools.product(centers, centers)))
    total = np.exp(model.logprob(grid).data).sum()
    assert total == pytest.approx(1.0, abs=1e-6)


def test_sampling_is_seeded_and_on_bins():
    """Test samples land on bin centres and repeat for a seed."""
    model = _random_made()
    a = model.sample(20, seed=5)
    b = model.sample(20, seed=5)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(model.bins.snap(a), a)
    with pytest.raises(ValueError):
        model.sample(0, seed=1)


def test_zero_init_samples_fit_binned_normal():
    """Test zero-init samples per dimension pass a 1% chi-square test against binned N(0, 1)."""
    n = 10_000
    model = MadeModel(MadeConfig(dims=2, hidden_sizes=[8]))
    samples = model.sample(n, seed=11)
    bins = model.bins
    probs = gaussian_bin_probabilities(0.0, 0.0, bins, model.floor_logprob)[0]
    dense = probs * n >= 5
    for d in range(2):
        counts = np.bincount(bins.bin_index(samples[:, d]), minlength=bins.count)
        observed = np.append(counts[dense], counts[~dense].sum())
        expected = np.append(probs[dense], probs[~dense].sum()) * n
        assert stats.chisquare(observed, expected).pvalue > 0.01

def test_input_shape_checked():
    """Test a wrong event shape raises ShapeError."""
    with pytest.raises(ShapeError):
        _random_made().logprob(np.zeros((2, 4)))


def test_parameter_gradients_match_finite_differences():
    """Test NLL gradients at random parameter coordinates."""
    model = _random_made(zero_mass_policy=ZeroMassPolicy.PER_DIM)
    batch = model.bins.snap(np.random.default_rng(1).normal(size=(6, 3)))
    assert parameter_gradient_check(model, batch, n_coords=12) < 1e-4


def _needle_model():
    """x1 pinned at 0 with sigma 0.01, x2 standard normal."""
    model = MadeModel(MadeConfig(dims=2, hidden_sizes=[4], zero_mass_policy=ZeroMassPolicy.JOINT))
    arrays = model.arrays()
    arrays["head.bias"] = np.array([0.0, 0.0, math.log(0.01), 0.0])
    model.set_parameters(arrays)
    return model


def test_gradient_field_vanishes_off_the_manifold():
    """Test a sharp x1 conditional gives near-zero gradients in most of the plane."""
    field = gradient_field(_needle_model(), GridSpec())
    assert field.values.shape == (100, 100)
    assert field.near_zero_fraction(1e-3) >= 0.9
    bands = field.nonzero_column_bands(1e-3)
    assert len(bands) == 1
    first, last = bands[0]
    assert first <= 49 and last >= 50


def test_density_field_sums_to_one_on_bin_grid():
    """Test the learned probabilities over a grid of bin centres sum to one."""
    model = MadeModel(
        MadeConfig(dims=2, hidden_sizes=[6], zero_init_head=False, seed=3, zero_mass_policy=ZeroMassPolicy.PER_DIM)
    )
    grid = GridSpec(x1_range=(-5.0, 5.0), x2_range=(-5.0, 5.0), nx=51, ny=51)
    field = density_field(model, grid)
    assert field.values.sum() == pytest.approx(1.0, abs=1e-6)


def test_bins_config_round_trip():
    """Test MADE accepts a custom bin grid."""
    bins = BinSpec(lo=-2.0, hi=2.0, count=9)
    model = MadeModel(MadeConfig(dims=2, hidden_sizes=[4], bins=bins))
    assert model.bins.count == 9
    assert model.sample(3, seed=0).shape == (3, 2)
