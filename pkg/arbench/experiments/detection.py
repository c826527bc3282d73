"""Outlier detection: NLL intervals, class-conditional Gaussians and the evaluation matrix."""

from __future__ import annotations

import logging
import threading
from abc import ABC, abstractmethod
from typing import Callable, Hashable, Optional, Sequence

import numpy as np
from scipy import special

from arbench.core.errors import ShapeError
from arbench.experiments.training import evaluate_bits_per_dim
from arbench.models.dataset import Dataset
from arbench.models.detection import (
    INTERVAL_COLUMN_NAMES,
    CcgDetector,
    CurvePoint,
    DetectionMatrix,
    IntervalDetector,
    IntervalKind,
    ProbeSummary,
    Verdict,
)
from arbench.networks.base import ARModel

logger = logging.getLogger(__name__)

# Floor on per-feature variances so constant features keep the covariance definite.
MIN_VARIANCE = 1e-6

FeatureFn = Callable[[np.ndarray], np.ndarray]


def fit_interval(train_bits_per_dim: Sequence[float], kind: IntervalKind | str) -> IntervalDetector:
    """Population mean and standard deviation of training-set bits/dim.

    Raises:
        ValueError: If fewer than two scores are given or any is non-finite.
    """
    values = np.asarray(train_bits_per_dim, dtype=np.float64).ravel()
    if len(values) < 2:
        raise ValueError(f"interval fitting needs at least 2 scores, got {len(values)}")
    if not np.all(np.isfinite(values)):
        raise ValueError("training scores must be finite")
    kind = IntervalKind(kind)
    if np.all(values == values[0]):
        return IntervalDetector(mu=float(values[0]), sigma=0.0, kind=kind)
    return IntervalDetector(mu=float(values.mean()), sigma=float(values.std(ddof=0)), kind=kind)


def classify_interval(detector: IntervalDetector, bits_per_dim: float) -> Verdict:
    return Verdict.INLIER if bool(detector.accepts(bits_per_dim)) else Verdict.OUTLIER


def _stratified_holdout(labels: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    fit_parts, held_parts = [], []
    for label in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == label))
        held = min(max(1, int(round(fraction * len(members)))), len(members) - 1)
        held_parts.append(members[:held])
        fit_parts.append(members[held:])
    return np.sort(np.concatenate(fit_parts)), np.sort(np.concatenate(held_parts))


def fit_ccg(
    features: np.ndarray,
    labels: Sequence[int],
    shrinkage: float = 0.05,
    percentile: float = 5.0,
    holdout_fraction: float = 0.2,
    seed: int = 0,
) -> CcgDetector:
    """Fit class means and a tied shrunk covariance, then calibrate the threshold.

    The covariance is (1 - shrinkage) * pooled + shrinkage * diag(pooled),
    estimated on a stratified fit split. The threshold is the ``percentile``-th
    percentile of the max-class log-likelihood over the held-out split.

    Raises:
        ValueError: If a class has fewer than two examples or inputs disagree.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2:
        raise ShapeError(f"features must be (n, d), got shape {features.shape}")
    if len(features) != len(labels):
        raise ValueError(f"{len(features)} feature vectors but {len(labels)} labels")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    classes, counts = np.unique(labels, return_counts=True)
    sparse = [int(c) for c, n in zip(classes, counts) if n < 2]
    if sparse:
        raise ValueError(f"classes {sparse} have fewer than 2 examples")

    fit_idx, held_idx = _stratified_holdout(labels, holdout_fraction, seed)
    x_fit, y_fit = features[fit_idx], labels[fit_idx]
    means = np.stack([x_fit[y_fit == c].mean(axis=0) for c in classes])
    centred = x_fit - means[np.searchsorted(classes, y_fit)]
    dof = max(len(x_fit) - len(classes), 1)
    pooled = centred.T @ centred / dof
    pooled = 0.5 * (pooled + pooled.T)
    diagonal = np.maximum(np.diag(pooled), MIN_VARIANCE)
    np.fill_diagonal(pooled, diagonal)
    covariance = (1.0 - shrinkage) * pooled + shrinkage * np.diag(diagonal)

    detector = CcgDetector(
        classes=[int(c) for c in classes],
        means=means,
        covariance=covariance,
        shrinkage=shrinkage,
        threshold=-np.inf,
    )
    held_scores = score_ccg(detector, features[held_idx])
    threshold = float(np.percentile(held_scores, percentile))
    logger.info(
        f"Fitted CCG on {len(x_fit)} vectors, {len(classes)} classes, d={features.shape[1]}; "
        f"threshold {threshold:.3f} from {len(held_idx)} held-out"
    )
    return detector.with_threshold(threshold)


def score_ccg(detector: CcgDetector, features: np.ndarray) -> np.ndarray:
    """Max over classes of the Gaussian log-likelihood, per feature vector."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != detector.dims:
        raise ShapeError(f"feature dimension {features.shape[1]} does not match detector dimension {detector.dims}")
    return detector.class_loglik(features).max(axis=1)


def ccg_accepts(detector: CcgDetector, features: np.ndarray) -> np.ndarray:
    return score_ccg(detector, features) >= detector.threshold


def classify_ccg(detector: CcgDetector, feature: np.ndarray) -> Verdict:
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 1:
        raise ShapeError(f"classify_ccg takes one feature vector, got shape {feature.shape}")
    return Verdict.INLIER if bool(ccg_accepts(detector, feature)[0]) else Verdict.OUTLIER


class ScoreCache:
    """Per-(scorer, probe set) score arrays shared between detector columns."""

    def __init__(self):
        self._scores: dict[Hashable, np.ndarray] = {}
        self._lock = threading.Lock()

    def get(self, key: Hashable, compute: Callable[[], np.ndarray]) -> np.ndarray:
        with self._lock:
            if key in self._scores:
                return self._scores[key]
        scores = compute()
        with self._lock:
            return self._scores.setdefault(key, scores)

    def __len__(self) -> int:
        return len(self._scores)


class DetectorColumn(ABC):
    """One column of the detection matrix."""

    name: str

    @abstractmethod
    def accepts(self, probe: Dataset, cache: ScoreCache) -> np.ndarray:
        """Boolean inlier flag per example of ``probe``."""


class IntervalColumn(DetectorColumn):
    def __init__(self, detector: IntervalDetector, model: ARModel, name: Optional[str] = None):
        self.detector = detector
        self.model = model
        self.name = name or INTERVAL_COLUMN_NAMES[detector.kind]

    def accepts(self, probe: Dataset, cache: ScoreCache) -> np.ndarray:
        bits = cache.get(("ar_bits", id(self.model), probe.name), lambda: evaluate_bits_per_dim(self.model, probe.examples))
        return self.detector.accepts(bits)


class CcgColumn(DetectorColumn):
    def __init__(self, detector: CcgDetector, feature_fn: FeatureFn, name: str = "CCG"):
        self.detector = detector
        self.feature_fn = feature_fn
        self.name = name

    def accepts(self, probe: Dataset, cache: ScoreCache) -> np.ndarray:
        scores = cache.get(
            ("ccg", id(self.detector), probe.name),
            lambda: score_ccg(self.detector, self.feature_fn(probe.examples)),
        )
        return scores >= self.detector.threshold


def build_interval_columns(model: ARModel, train_bits_per_dim: Sequence[float]) -> list[IntervalColumn]:
    """AR-2SD, AR-1SD and AR-One-sided columns sharing one fitted mu and sigma."""
    return [
        IntervalColumn(fit_interval(train_bits_per_dim, kind), model)
        for kind in (IntervalKind.TWO_SD, IntervalKind.ONE_SD, IntervalKind.ONE_SIDED)
    ]


def standard_columns(
    model: ARModel,
    train_bits_per_dim: Sequence[float],
    ccg: Optional[CcgDetector] = None,
    feature_fn: Optional[FeatureFn] = None,
) -> list[DetectorColumn]:
    """The three interval columns plus CCG when a detector and features are given."""
    columns: list[DetectorColumn] = list(build_interval_columns(model, train_bits_per_dim))
    if ccg is not None:
        if feature_fn is None:
            raise ValueError("a CCG column needs a feature function")
        columns.append(CcgColumn(ccg, feature_fn))
    return columns


def detection_table(
    probe_sets: Sequence[Dataset],
    columns: Sequence[DetectorColumn],
    cache: Optional[ScoreCache] = None,
) -> DetectionMatrix:
    """Percent of each probe set classified in-distribution by each detector.

    Raises:
        ValueError: If no probe sets are given or two share a name.
    """
    if not probe_sets:
        raise ValueError("detection_table needs at least one probe set")
    names = [probe.name for probe in probe_sets]
    if len(set(names)) != len(names):
        raise ValueError(f"probe set names must be unique, got {names}")
    cache = cache or ScoreCache()
    cells = []
    for probe in probe_sets:
        row = [100.0 * float(np.mean(column.accepts(probe, cache))) for column in columns]
        cells.append(row)
        logger.info(f"{probe.name}: " + ", ".join(f"{c.name}={v:.1f}%" for c, v in zip(columns, row)))
    return DetectionMatrix(rows=names, columns=[c.name for c in columns], cells=cells)


def probe_summary(model: ARModel, probe_sets: Sequence[Dataset], cache: Optional[ScoreCache] = None) -> list[ProbeSummary]:
    """Bits/dim statistics of each probe set under ``model``."""
    cache = cache or ScoreCache()
    summaries = []
    for probe in probe_sets:
        bits = cache.get(("ar_bits", id(model), probe.name), lambda: evaluate_bits_per_dim(model, probe.examples))
        summaries.append(
            ProbeSummary(
                name=probe.name,
                count=len(bits),
                mean_bits=float(bits.mean()),
                std_bits=float(bits.std(ddof=0)),
                min_bits=float(bits.min()),
                max_bits=float(bits.max()),
            )
        )
    return summaries


def proxy_score_from_probabilities(probabilities: np.ndarray) -> float:
    """exp of the mean KL(p(y|x) || mean p(y|x)) over samples."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.ndim != 2 or len(probabilities) < 2:
        raise ValueError(f"need class probabilities for at least 2 samples, got shape {probabilities.shape}")
    marginal = probabilities.mean(axis=0)
    kl = special.rel_entr(probabilities, marginal[None, :]).sum(axis=1)
    return float(np.exp(kl.mean()))


def proxy_perceptual_score(classifier, samples: np.ndarray) -> float:
    """Inception-style score computed with the desk classifier.

    ``classifier`` is anything with ``predict_proba`` or a callable returning
    class probabilities.
    """
    predict = getattr(classifier, "predict_proba", classifier)
    return proxy_score_from_probabilities(predict(np.asarray(samples, dtype=np.float64)))


def score_likelihood_curve(
    model: ARModel,
    classifier,
    sample_sets: Sequence[Dataset],
    checkpoints: Optional[Sequence[Optional[str]]] = None,
) -> list[CurvePoint]:
    """Joint (proxy score, bits/dim) for a sequence of sample sets."""
    checkpoints = list(checkpoints) if checkpoints is not None else [None] * len(sample_sets)
    if len(checkpoints) != len(sample_sets):
        raise ValueError("one checkpoint label per sample set is required")
    points = []
    for samples, checkpoint in zip(sample_sets, checkpoints):
        bits = evaluate_bits_per_dim(model, samples.examples)
        score = proxy_perceptual_score(classifier, samples.examples)
        points.append(
            CurvePoint(name=samples.name, proxy_score=score, bits_per_dim=float(bits.mean()), checkpoint=checkpoint)
        )
        logger.info(f"{samples.name}: proxy score {score:.3f}, {bits.mean():.4f} bits/dim")
    return points
