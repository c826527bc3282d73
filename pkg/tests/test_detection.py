"""Tests for outlier detectors and the detection matrix."""

import numpy as np
import pytest

from arbench.core.errors import ShapeError
from arbench.experiments.detection import (
    DetectorColumn,
    ScoreCache,
    build_interval_columns,
    ccg_accepts,
    classify_ccg,
    classify_interval,
    detection_table,
    fit_ccg,
    fit_interval,
    probe_summary,
    proxy_perceptual_score,
    proxy_score_from_probabilities,
    score_ccg,
)
from arbench.experiments.training import evaluate_bits_per_dim
from arbench.models.bins import BinSpec
from arbench.models.detection import IntervalDetector, IntervalKind, Verdict
from arbench.networks.base import UniformARModel
from arbench.utils.datasets import make_probe_images


def _gaussian_classes(n_per_class, seed=0, dims=8):
    rng = np.random.default_rng(seed)
    offset = np.zeros(dims)
    offset[0] = 5.0
    features = np.concatenate(
        [rng.standard_normal((n_per_class, dims)) + offset, rng.standard_normal((n_per_class, dims)) - offset]
    )
    labels = np.repeat([0, 1], n_per_class)
    return features, labels


def test_fit_interval_population_std():
    """Test mu and sigma use the population formula."""
    detector = fit_interval([1.0, 3.0], IntervalKind.TWO_SD)
    assert detector.mu == 2.0
    assert detector.sigma == 1.0


def test_interval_rules():
    """Test the three interval variants on a unit detector."""
    two = IntervalDetector(mu=0.0, sigma=1.0, kind=IntervalKind.TWO_SD)
    one = IntervalDetector(mu=0.0, sigma=1.0, kind=IntervalKind.ONE_SD)
    one_sided = IntervalDetector(mu=0.0, sigma=1.0, kind=IntervalKind.ONE_SIDED)
    assert classify_interval(two, 1.5) == Verdict.INLIER
    assert classify_interval(one, 1.5) == Verdict.OUTLIER
    assert classify_interval(one_sided, -100.0) == Verdict.INLIER
    assert classify_interval(one_sided, 2.5) == Verdict.OUTLIER
    assert classify_interval(two, 2.0) == Verdict.INLIER
    assert classify_interval(two, -2.5) == Verdict.OUTLIER


def test_constant_scores_give_zero_width_interval():
    """Test identical training scores accept only that exact score."""
    detector = fit_interval([4.25, 4.25, 4.25], "one_sd")
    assert detector.sigma == 0.0
    assert classify_interval(detector, 4.25) == Verdict.INLIER
    assert classify_interval(detector, 4.2500001) == Verdict.OUTLIER


def test_fit_interval_input_checks():
    """Test too few or non-finite scores are refused."""
    with pytest.raises(ValueError):
        fit_interval([1.0], "two_sd")
    with pytest.raises(ValueError):
        fit_interval([1.0, float("inf")], "two_sd")


def test_interval_acceptance_is_nested():
    """Test AR-1SD accepts a subset of AR-2SD, which accepts a subset of AR-One-sided."""
    rng = np.random.default_rng(7)
    train = rng.normal(3.0, 0.4, 500)
    probes = rng.normal(3.0, 1.5, 2000)
    one, two, one_sided = (fit_interval(train, kind).accepts(probes) for kind in ("one_sd", "two_sd", "one_sided"))
    assert np.all(two[one])
    assert np.all(one_sided[two])
    assert one.sum() < two.sum() < one_sided.sum()


def test_interval_verdicts_follow_score_shift():
    """Test shifting every score by a constant leaves each verdict unchanged."""
    rng = np.random.default_rng(8)
    train = rng.normal(2.0, 0.3, 200)
    probes = rng.normal(2.0, 0.8, 500)
    for kind in IntervalKind:
        base = fit_interval(train, kind)
        shifted = fit_interval(train + 5.0, kind)
        assert shifted.mu == pytest.approx(base.mu + 5.0)
        assert shifted.sigma == pytest.approx(base.sigma)
        np.testing.assert_array_equal(shifted.accepts(probes + 5.0), base.accepts(probes))

def test_ccg_calibrated_acceptance():
    """Test held-out in-distribution acceptance sits near 95 percent."""
    features, labels = _gaussian_classes(5000, seed=0)
    detector = fit_ccg(features, labels, shrinkage=0.05, percentile=5.0, seed=0)
    fresh, _ = _gaussian_classes(2000, seed=1)
    acceptance = 100.0 * np.mean(ccg_accepts(detector, fresh))
    assert acceptance == pytest.approx(95.0, abs=2.0)


def test_lower_ccg_threshold_never_accepts_less():
    """Test acceptance is monotone non-increasing in the threshold."""
    features, labels = _gaussian_classes(300, seed=9)
    detector = fit_ccg(features, labels)
    probes = np.random.default_rng(10).normal(0.0, 3.0, (400, 8))
    scores = score_ccg(detector, probes)
    thresholds = np.sort(np.concatenate([scores[::20], [detector.threshold, -np.inf]]))[::-1]
    accepted = [ccg_accepts(detector.with_threshold(float(t)), probes).sum() for t in thresholds]
    assert all(b >= a for a, b in zip(accepted, accepted[1:]))
    assert accepted[-1] == len(probes)

def test_ccg_rejects_far_probes():
    """Test probes far from both class means are rejected."""
    features, labels = _gaussian_classes(1000, seed=2)
    detector = fit_ccg(features, labels)
    probes = np.random.default_rng(3).standard_normal((500, 8))
    probes[:, 1] += 20.0
    assert np.mean(ccg_accepts(detector, probes)) < 0.01


def test_full_shrinkage_gives_diagonal_covariance():
    """Test shrinkage 1 drops every off-diagonal entry."""
    rng = np.random.default_rng(4)
    base = rng.standard_normal((400, 3))
    features = np.column_stack([base[:, 0], base[:, 0] + 0.1 * base[:, 1], base[:, 2]])
    labels = np.repeat([0, 1], 200)
    detector = fit_ccg(features, labels, shrinkage=1.0)
    off_diagonal = detector.covariance - np.diag(np.diag(detector.covariance))
    assert np.all(off_diagonal == 0.0)


def test_ccg_constant_feature_stays_definite():
    """Test a constant feature column is floored rather than singular."""
    features, labels = _gaussian_classes(100, seed=5, dims=3)
    features[:, 2] = 1.0
    detector = fit_ccg(features, labels)
    assert np.all(np.isfinite(score_ccg(detector, features)))


def test_ccg_input_checks():
    """Test sparse classes, bad shapes and dimension mismatches."""
    features, labels = _gaussian_classes(10, seed=6, dims=4)
    with pytest.raises(ValueError):
        fit_ccg(np.vstack([features, np.zeros((1, 4))]), np.append(labels, 7))
    detector = fit_ccg(features, labels)
    with pytest.raises(ShapeError):
        score_ccg(detector, np.zeros((2, 5)))
    with pytest.raises(ShapeError):
        classify_ccg(detector, np.zeros((2, 4)))
    assert classify_ccg(detector, features[0]) in (Verdict.INLIER, Verdict.OUTLIER)


def test_proxy_score_extremes():
    """Test a uniform predictor scores 1 and confident balanced predictions score C."""
    assert proxy_score_from_probabilities(np.full((6, 3), 1.0 / 3.0)) == pytest.approx(1.0)
    one_hot = np.eye(4)[np.arange(8) % 4]
    assert proxy_score_from_probabilities(one_hot) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        proxy_score_from_probabilities(np.ones((1, 3)))


def test_proxy_score_accepts_callables():
    """Test the classifier may be a plain function."""
    score = proxy_perceptual_score(lambda x: np.eye(2)[np.arange(len(x)) % 2], np.zeros((4, 1, 2, 2)))
    assert score == pytest.approx(2.0)


class _ThresholdColumn(DetectorColumn):
    """Accepts examples whose mean value is below a cutoff."""

    def __init__(self, name, cutoff, calls):
        self.name = name
        self.cutoff = cutoff
        self.calls = calls

    def accepts(self, probe, cache):
        def compute():
            self.calls.append(probe.name)
            return probe.examples.reshape(len(probe), -1).mean(axis=1)

        return cache.get(("mean", probe.name), compute) < self.cutoff


def test_detection_table_layout_and_cache():
    """Test rows, columns, percentages and score sharing across columns."""
    bins = BinSpec.image()
    black = make_probe_images("black", 10, (1, 2, 2), bins=bins)
    white = make_probe_images("white", 10, (1, 2, 2), bins=bins)
    calls = []
    columns = [_ThresholdColumn("low", 0.0, calls), _ThresholdColumn("any", 2.0, calls)]
    matrix = detection_table([black, white], columns)
    assert matrix.rows == ["black", "white"]
    assert matrix.columns == ["low", "any"]
    assert matrix.cell("black", "low") == 100.0
    assert matrix.cell("white", "low") == 0.0
    assert matrix.cell("white", "any") == 100.0
    assert calls == ["black", "white"]
    text = matrix.render_text().splitlines()
    assert text[0].split() == ["Dataset", "low", "any"]
    assert set(text[1]) == {"-"}
    assert text[2].split() == ["black", "100.0", "100.0"]


def test_detection_table_input_checks():
    """Test empty probe lists and duplicate names are refused."""
    probe = make_probe_images("black", 2, (1, 2, 2))
    with pytest.raises(ValueError):
        detection_table([], [])
    with pytest.raises(ValueError):
        detection_table([probe, probe], [])


def test_interval_columns_with_uniform_model():
    """Test a constant-score model accepts every probe under every interval."""
    bins = BinSpec.image()
    model = UniformARModel((1, 2, 2), bins)
    train_bits = evaluate_bits_per_dim(model, np.zeros((4, 1, 2, 2)))
    columns = build_interval_columns(model, train_bits)
    assert [c.name for c in columns] == ["AR-2SD", "AR-1SD", "AR-One-sided"]
    probes = [make_probe_images(kind, 5, (1, 2, 2), seed=1, bins=bins) for kind in ("noise", "black")]
    matrix = detection_table(probes, columns)
    assert all(cell == 100.0 for row in matrix.cells for cell in row)
    summaries = probe_summary(model, probes)
    assert summaries[0].mean_bits == pytest.approx(8.0)
    assert summaries[0].std_bits == pytest.approx(0.0)


def test_score_cache_computes_once():
    """Test repeated lookups reuse the first result."""
    cache = ScoreCache()
    calls = []
    first = cache.get("k", lambda: calls.append(1) or np.ones(2))
    second = cache.get("k", lambda: calls.append(1) or np.zeros(2))
    assert calls == [1]
    assert first is second
    assert len(cache) == 1
