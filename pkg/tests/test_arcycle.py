"""Tests for the ARCycle objective, blur and training loop."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from arbench.autodiff import Tensor, finite_diff_check
from arbench.autodiff import functional as F
from arbench.core.errors import ShapeError
from arbench.experiments.arcycle import (
    ArCycleData,
    ArCycleTerms,
    arcycle_total,
    auto_beta,
    cycle_loss,
    gaussian_blur,
    gaussian_kernel1d,
    nll_loss,
    objective_gradients,
    train_arcycle,
)
from arbench.models.bins import BinSpec
from arbench.models.configs import Ablation, ArCycleConfig, GeneratorConfig, PixelConfig
from arbench.networks.base import UniformARModel
from arbench.networks.generator import ConvGenerator, IdentityGenerator
from arbench.networks.pixel import PixelARModel
from arbench.utils.datasets import gen_stroke_images


def _pixel(channels, size=5):
    return PixelARModel(
        PixelConfig(channels=channels, height=size, width=size, hidden_channels=3, layers=2, first_kernel=3, mixtures=2)
    )


def _generators():
    f = ConvGenerator(GeneratorConfig(in_channels=3, out_channels=1, hidden_channels=3, seed=0))
    g = ConvGenerator(GeneratorConfig(in_channels=1, out_channels=3, hidden_channels=3, seed=1))
    return f, g


def _batches(size=5):
    rng = np.random.default_rng(0)
    bins = BinSpec.image()
    return bins.snap(rng.uniform(-1, 1, (2, 3, size, size))), bins.snap(rng.uniform(-1, 1, (2, 1, size, size)))


def test_kernel_is_normalized_and_symmetric():
    """Test the 1-D taps sum to one over radius ceil(truncate * sigma)."""
    taps = gaussian_kernel1d(1.2, truncate=3.0)
    assert len(taps) == 2 * math.ceil(3.6) + 1
    assert taps.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(taps, taps[::-1])
    with pytest.raises(ValueError):
        gaussian_kernel1d(0.0)


def test_blur_keeps_constant_images():
    """Test a constant image is unchanged by blurring."""
    image = np.full((10, 10), 0.7)
    np.testing.assert_allclose(gaussian_blur(image, 1.5).data, image, atol=1e-12)


def test_blur_of_impulse_is_separable_kernel():
    """Test an interior impulse spreads into outer(k, k)."""
    image = np.zeros((21, 21))
    image[10, 10] = 1.0
    taps = gaussian_kernel1d(1.0, truncate=3.0)
    out = gaussian_blur(image, 1.0, truncate=3.0).data
    expected = np.zeros((21, 21))
    expected[7:14, 7:14] = np.outer(taps, taps)
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_blur_semigroup_in_interior():
    """Test two sigma=2 blurs match one sigma=2*sqrt(2) blur away from the edges."""
    image = np.random.default_rng(0).uniform(-1, 1, (80, 80))
    twice = gaussian_blur(gaussian_blur(image, 2.0, truncate=8.0), 2.0, truncate=8.0).data
    once = gaussian_blur(image, 2.0 * math.sqrt(2.0), truncate=8.0).data
    np.testing.assert_allclose(twice[34:46, 34:46], once[34:46, 34:46], atol=1e-6)


def test_blur_preserves_batch_shape():
    """Test batched colour images keep their shape."""
    batch = np.random.default_rng(1).uniform(size=(2, 3, 7, 7))
    assert gaussian_blur(batch, 0.8).shape == (2, 3, 7, 7)
    with pytest.raises(ShapeError):
        gaussian_blur(np.zeros(5), 1.0)


def test_blur_wider_than_image():
    """Test a kernel wider than the image still blurs in place."""
    constant = np.full((1, 1, 14, 14), 0.3)
    out = gaussian_blur(constant, 5.0).data
    assert out.shape == (1, 1, 14, 14)
    np.testing.assert_allclose(out.sum(), constant.sum(), rtol=1e-12)
    assert gaussian_blur(np.zeros((1, 1, 14, 14)), 5.0).shape == (1, 1, 14, 14)
    noisy = np.random.default_rng(4).uniform(size=(1, 1, 14, 14))
    assert np.all(np.isfinite(gaussian_blur(noisy, 5.0).data))

def test_blur_gradients():
    """Test gradients flow through the separable blur with reflected edges."""
    image = np.random.default_rng(2).normal(size=(1, 1, 6, 6))
    weights = np.random.default_rng(3).normal(size=(1, 1, 6, 6))
    fn = lambda t: F.reduce_sum(F.square(gaussian_blur(t, 0.8, truncate=2.0)) * weights)  # noqa: E731
    assert finite_diff_check(fn, image) < 1e-4


def test_uniform_density_nll():
    """Test a uniform density scores dims * ln(count) nats per image."""
    model = UniformARModel((1, 4, 4), BinSpec.image())
    value = nll_loss(model, IdentityGenerator(), np.zeros((3, 1, 4, 4))).item()
    assert value == pytest.approx(16 * math.log(256))


def test_cycle_loss_identity_is_zero():
    """Test identity mappings have no cycle loss."""
    x, y = _batches()
    identity = IdentityGenerator()
    assert cycle_loss(identity, identity, x, y).item() == 0.0


def test_cycle_loss_symmetric_in_roles():
    """Test swapping the mappings and the domains gives the same loss."""
    f, g = _generators()
    x, y = _batches()
    assert cycle_loss(f, g, x, y).item() == cycle_loss(g, f, y, x).item()
    assert cycle_loss(f, g, x, y).item() > 0.0


def test_cycle_loss_shape_mismatch():
    """Test a round trip that changes shape raises ShapeError."""
    f, _ = _generators()
    x, y = _batches()
    with pytest.raises(ShapeError):
        cycle_loss(IdentityGenerator(), f, x, y)


def test_nll_only_equals_full_with_zero_beta():
    """Test the NLL-only ablation is bitwise the full objective at beta = 0."""
    f, g = _generators()
    p_x, p_y = _pixel(3), _pixel(1)
    x, y = _batches()
    full = arcycle_total(f, g, p_x, p_y, (x, y), beta=0.0, ablation=Ablation.FULL)
    nll_only = arcycle_total(f, g, p_x, p_y, (x, y), beta=3.0, ablation=Ablation.NLL_ONLY)
    assert full.item() == nll_only.item()
    _, full_f, full_g = objective_gradients(f, g, p_x, p_y, x, y, beta=0.0, ablation=Ablation.FULL)
    _, only_f, only_g = objective_gradients(f, g, p_x, p_y, x, y, beta=3.0, ablation=Ablation.NLL_ONLY)
    for name in full_f:
        np.testing.assert_array_equal(full_f[name], only_f[name])
    for name in full_g:
        np.testing.assert_array_equal(full_g[name], only_g[name])


def test_cycle_only_ignores_densities():
    """Test the cycle-only objective is exactly the cycle loss."""
    f, g = _generators()
    x, y = _batches()
    total = arcycle_total(f, g, _pixel(3), _pixel(1), (x, y), beta=2.0, ablation=Ablation.CYC_ONLY)
    assert total.item() == cycle_loss(f, g, x, y).item()


def test_full_objective_weights_cycle_term():
    """Test the full objective adds beta times the cycle loss."""
    f, g = _generators()
    p_x, p_y = _pixel(3), _pixel(1)
    x, y = _batches()
    base = arcycle_total(f, g, p_x, p_y, (x, y), beta=0.0).item()
    weighted = arcycle_total(f, g, p_x, p_y, (x, y), beta=2.5).item()
    assert weighted - base == pytest.approx(2.5 * cycle_loss(f, g, x, y).item(), rel=1e-9)
    with pytest.raises(ValueError):
        arcycle_total(f, g, p_x, p_y, (x, y), beta=-1.0)


@pytest.mark.parametrize("ablation", [Ablation.FULL, Ablation.BLUR])
def test_generator_gradients_match_finite_differences(ablation):
    """Test objective gradients for a generator parameter."""
    f, g = _generators()
    p_x, p_y = _pixel(3), _pixel(1)
    x, y = _batches()

    def objective(bias):
        params = f.parameters()
        params["decoder.bias"] = bias
        return arcycle_total(f, g, p_x, p_y, (x, y), beta=1.5, params_f=params, ablation=ablation, blur_sigma=0.7)

    assert finite_diff_check(objective, f.arrays()["decoder.bias"]) < 1e-4


def test_gradients_only_for_requested_generator():
    """Test wrt=F leaves G without gradients."""
    f, g = _generators()
    x, y = _batches()
    _, grads_f, grads_g = objective_gradients(f, g, _pixel(3), _pixel(1), x, y, beta=1.0, wrt="F")
    assert set(grads_f) == set(f.arrays())
    assert grads_g == {}
    with pytest.raises(ValueError):
        objective_gradients(f, g, _pixel(3), _pixel(1), x, y, beta=1.0, wrt="H")


def test_auto_beta_balances_terms():
    """Test beta equals the summed NLL terms over the cycle loss."""
    terms = ArCycleTerms(nll_y=Tensor(3.0), nll_x=Tensor(1.0), cyc=Tensor(0.5))
    assert auto_beta(terms) == 8.0
    assert auto_beta(ArCycleTerms(nll_y=Tensor(3.0), nll_x=Tensor(1.0), cyc=Tensor(0.0))) == 1.0


def test_blur_ablation_needs_positive_sigma():
    """Test the blur ablation refuses a non-positive sigma."""
    with pytest.raises(ValidationError):
        ArCycleConfig(ablation=Ablation.BLUR, blur_sigma=0.0)


def _tiny_data():
    gray = gen_stroke_images(16, size=5, seed=0)
    return ArCycleData.from_grayscale(gray, test=gen_stroke_images(4, size=5, seed=1), seed=0)


def test_from_grayscale_builds_coloured_domain():
    """Test X is the coloured half and pairs line up with Y."""
    data = _tiny_data()
    assert data.x.event_shape == (3, 5, 5)
    assert data.y.event_shape == (1, 5, 5)
    assert len(data.x) + len(data.y) == 16
    assert data.paired_x.shape[0] == data.paired_y.shape[0] == len(data.y)
    np.testing.assert_array_equal(data.paired_y, data.y.examples)


def test_train_arcycle_logs_snapshots_and_checkpoints(tmp_path):
    """Test a short run logs every iteration, snapshots on schedule and freezes the densities."""
    data = _tiny_data()
    p_x, p_y = _pixel(3), _pixel(1)
    frozen = (p_x.fingerprint(), p_y.fingerprint())
    f, g = _generators()
    start = f.fingerprint()
    cfg = ArCycleConfig(iterations=3, snapshot_every=2, snapshot_count=2, batch_size=4, pretrain_steps=2)
    report = train_arcycle(f, g, p_x, p_y, data, cfg, output_dir=tmp_path)

    assert [e.iteration for e in report.log] == [0, 1, 2, 3]
    assert [s.iteration for s in report.snapshots] == [0, 2, 3]
    assert report.snapshots[0].real.shape == (2, 3, 5, 5)
    assert report.snapshots[0].translated.shape == (2, 1, 5, 5)
    assert report.snapshots[0].reconstructed.shape == (2, 3, 5, 5)
    assert report.beta > 0
    assert len(report.pretrain_loss) == 2
    assert report.reference_nll_y_bits is not None
    assert (tmp_path / "generators" / "F_iter_00002.ardx").exists()
    assert "G@3" in report.generator_checkpoints
    assert (p_x.fingerprint(), p_y.fingerprint()) == frozen
    assert f.fingerprint() != start
    assert list(report.to_frame().columns) == ["iteration", "l_cyc", "nll_x_bits", "nll_y_bits"]


def test_train_arcycle_nll_only_has_zero_beta():
    """Test the NLL-only ablation runs with beta = 0."""
    f, g = _generators()
    cfg = ArCycleConfig(iterations=1, batch_size=4, ablation=Ablation.NLL_ONLY, beta=4.0)
    report = train_arcycle(f, g, _pixel(3), _pixel(1), _tiny_data(), cfg)
    assert report.beta == 0.0
    assert report.ablation == "nll_only"
