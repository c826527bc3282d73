"""Tests for the masked-convolution pixel model."""

import itertools

import numpy as np
import pytest

from arbench.experiments.training import parameter_gradient_check
from arbench.models.bins import BinSpec
from arbench.models.configs import PixelConfig, ZeroMassPolicy
from arbench.networks.pixel import PixelARModel, pixel_receptive_field_check, raster_mask


def _small_pixel(**overrides):
    settings = dict(height=6, width=6, hidden_channels=4, layers=3, first_kernel=3, kernel=3, mixtures=2, seed=1)
    settings.update(overrides)
    return PixelARModel(PixelConfig(**settings))


def test_raster_masks():
    """Test type A excludes the centre tap and type B keeps it."""
    a = raster_mask(3, include_center=False)
    b = raster_mask(3, include_center=True)
    np.testing.assert_array_equal(a, [[1, 1, 1], [1, 0, 0], [0, 0, 0]])
    np.testing.assert_array_equal(b, [[1, 1, 1], [1, 1, 0], [0, 0, 0]])


def test_even_kernel_rejected():
    """Test kernel sizes must be odd."""
    with pytest.raises(ValueError):
        PixelConfig(kernel=4)


@pytest.mark.parametrize("position", [(0, 0), (2, 3), (5, 5)])
def test_conditionals_ignore_current_and_later_pixels(position):
    """Test the raster-order receptive field."""
    assert pixel_receptive_field_check(_small_pixel(), position)


def test_colour_model_receptive_field():
    """Test channels of one pixel stay blind to that pixel."""
    model = _small_pixel(channels=3)
    assert pixel_receptive_field_check(model, (3, 2))


def test_joint_probability_sums_to_one():
    """Test exp(log p) sums to one over every 2x2 image on a 4-level grid."""
    bins = BinSpec(lo=-1.0, hi=1.0, count=4)
    model = PixelARModel(
        PixelConfig(
            height=2,
            width=2,
            hidden_channels=4,
            layers=2,
            first_kernel=3,
            kernel=3,
            mixtures=2,
            seed=3,
            bins=bins,
            zero_mass_policy=ZeroMassPolicy.PER_DIM,
        )
    )
    centers = bins.centers()
    images = np.array(list(itertools.product(centers, repeat=4))).reshape(-1, 1, 2, 2)
    total = np.exp(model.logprob(images).data).sum()
    assert total == pytest.approx(1.0, abs=1e-6)


def test_logprob_shape_and_bits():
    """Test per-example log-probabilities and bits/dim agree."""
    model = _small_pixel()
    x = model.sample(3, seed=0)
    logp = model.logprob(x).data
    assert logp.shape == (3,)
    np.testing.assert_allclose(model.nll_bits_per_dim(x), -logp / (36 * np.log(2.0)))


def test_sampling_is_seeded_and_on_bins():
    """Test ancestral samples repeat for a seed and lie on bin centres."""
    model = _small_pixel(height=4, width=4)
    a = model.sample(2, seed=9)
    np.testing.assert_array_equal(a, model.sample(2, seed=9))
    np.testing.assert_array_equal(model.bins.snap(a), a)
    assert a.shape == (2, 1, 4, 4)


def test_parameter_gradients_match_finite_differences():
    """Test NLL gradients at random parameter coordinates."""
    model = _small_pixel(height=4, width=4)
    batch = model.bins.snap(np.random.default_rng(0).uniform(-1, 1, size=(2, 1, 4, 4)))
    assert parameter_gradient_check(model, batch, n_coords=10) < 1e-4


def test_receptive_field_extent():
    """Test the reported reach sums the kernel radii."""
    assert _small_pixel().receptive_field == (2, 2)
