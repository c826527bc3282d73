"""Maximum-likelihood training of AR models and the feature classifier."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from arbench.autodiff import functional as F
from arbench.autodiff.gradcheck import finite_diff_check
from arbench.autodiff.tape import Tape
from arbench.autodiff.tensor import Tensor
from arbench.core.config import settings
from arbench.core.errors import (
    CheckpointError,
    DomainError,
    NonFiniteError,
    ShapeError,
    TrainingDivergedError,
)
from arbench.density.discretized import LN2
from arbench.models.configs import ClassifierConfig, OptConfig
from arbench.models.dataset import Dataset
from arbench.models.records import ClassifierReport, TrainReport, ValidationPoint
from arbench.networks.base import ARModel, ParametricModule
from arbench.networks.checkpoint import load_checkpoint, save_checkpoint
from arbench.networks.classifier import ConvClassifier, cross_entropy

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First and second moment estimates per parameter."""
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m={name: np.zeros(np.shape(value)) for name, value in params.items()},
            v={name: np.zeros(np.shape(value)) for name, value in params.items()},
        )

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{name}": value for name, value in self.m.items()}
        out.update({f"adam.v.{name}": value for name, value in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, step: int, arrays: Mapping[str, np.ndarray]) -> "AdamState":
        m = {name[len("adam.m."):]: value for name, value in arrays.items() if name.startswith("adam.m.")}
        v = {name[len("adam.v."):]: value for name, value in arrays.items() if name.startswith("adam.v.")}
        return cls(step=step, m=m, v=v)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    cfg: OptConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected adaptive-moment update.

    Parameters without a gradient entry are treated as having zero gradient.

    Raises:
        ShapeError: If a gradient or moment shape differs from its parameter.
    """
    step = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        grad = np.asarray(grads.get(name, np.zeros(value.shape)), dtype=np.float64)
        m = state.m.get(name, np.zeros(value.shape))
        v = state.v.get(name, np.zeros(value.shape))
        if grad.shape != value.shape or m.shape != value.shape or v.shape != value.shape:
            raise ShapeError(
                f"adam: {name} has shape {value.shape} but gradient {grad.shape}, moments {m.shape}/{v.shape}"
            )
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        new_params[name] = value - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(step=step, m=new_m, v=new_v)


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Examples for one step; depends only on (seed, step) so resumed runs match."""
    rng = np.random.default_rng([seed, step])
    if batch_size >= n:
        return rng.permutation(n)
    return rng.choice(n, size=batch_size, replace=False)


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train, held-out) index split."""
    order = np.random.default_rng(seed).permutation(n)
    held = int(round(n * fraction))
    return np.sort(order[held:]), np.sort(order[:held])


def holdout_split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Optional[Dataset]]:
    """Seeded (train, held-out) split of a dataset; no held-out part when it would be empty."""
    train_idx, held_idx = split_indices(len(dataset), fraction, seed)
    if len(held_idx) == 0 or len(train_idx) == 0:
        return dataset, None
    return (
        dataset.subset(train_idx, name=f"{dataset.name}_train"),
        dataset.subset(held_idx, name=f"{dataset.name}_heldout"),
    )


def fit_module(
    module: ParametricModule,
    loss_fn: Callable[[np.ndarray, Mapping[str, Tensor]], Tensor],
    n_examples: int,
    cfg: OptConfig,
    state: Optional[AdamState] = None,
    start_step: int = 0,
    on_step: Optional[Callable[[int, float, AdamState], None]] = None,
) -> tuple[list[int], list[float], AdamState]:
    """Generic Adam loop shared by the trainers.

    ``loss_fn(indices, params)`` builds the scalar loss for one batch.
    """
    state = state or AdamState.zeros_like(module.arrays())
    steps, losses = [], []
    for step in range(start_step, cfg.max_steps):
        indices = batch_indices(n_examples, cfg.batch_size, cfg.seed, step)
        try:
            with Tape() as tape:
                leaves = module.trainable()
                loss = loss_fn(indices, leaves)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDivergedError(step)
                grads = tape.backward(loss)
        except (NonFiniteError, DomainError) as e:
            raise TrainingDivergedError(step, str(e)) from e
        grad_arrays = {name: grads[leaf] for name, leaf in leaves.items() if leaf in grads}
        updated, state = adam_step(module.arrays(), grad_arrays, state, cfg)
        module.set_parameters(updated)
        steps.append(step)
        losses.append(value)
        if (step + 1) % cfg.log_every == 0 or step == cfg.max_steps - 1:
            logger.info(f"step {step + 1}/{cfg.max_steps}: loss={value:.6f}")
        if on_step is not None:
            on_step(step, value, state)
    return steps, losses, state


def evaluate_nll(
    model: ARModel,
    examples: np.ndarray,
    batch_size: int = 256,
    workers: Optional[int] = None,
) -> np.ndarray:
    """Per-example NLL in nats; chunks run on threads, results kept in order."""
    examples = np.asarray(examples, dtype=np.float64)
    chunks = [examples[i:i + batch_size] for i in range(0, len(examples), batch_size)]
    workers = workers or settings.WORKERS

    def score(chunk: np.ndarray) -> np.ndarray:
        return -model.logprob(chunk).data

    if workers <= 1 or len(chunks) <= 1:
        return np.concatenate([score(c) for c in chunks])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(score, chunks)))


def evaluate_bits_per_dim(model: ARModel, examples: np.ndarray, workers: Optional[int] = None) -> np.ndarray:
    return evaluate_nll(model, examples, workers=workers) / (model.dims * LN2)


def train_mle(
    model: ARModel,
    dataset: Dataset,
    cfg: OptConfig,
    validation: Optional[Dataset] = None,
    checkpoint_dir: Optional[str | Path] = None,
    resume_from: Optional[str | Path] = None,
) -> TrainReport:
    """Minimize mean NLL with Adam.

    Args:
        model: AR model whose parameters are updated in place.
        dataset: Training examples.
        cfg: Optimizer and loop settings.
        validation: Held-out set scored at every checkpoint and at the end. When
            omitted, ``cfg.validation_fraction`` of the dataset is held out with
            ``cfg.seed``.
        checkpoint_dir: Where to write ``step_<n>.ardx`` and ``final.ardx``.
        resume_from: Checkpoint written by an earlier call to continue from.

    Returns:
        TrainReport with one entry per update.

    Raises:
        ValueError: If the dataset is empty.
        ShapeError: If the data does not match the model's input shape.
        TrainingDivergedError: If a loss becomes non-finite.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if validation is None:
        dataset, validation = holdout_split(dataset, cfg.validation_fraction, cfg.seed)
    data = dataset.examples
    model.check_input(data[:1])
    dims = model.dims
    start = time.perf_counter()

    state, start_step = None, 0
    if resume_from is not None:
        manifest, arrays = load_checkpoint(resume_from)
        if manifest.module_kind != model.kind:
            raise CheckpointError(f"checkpoint holds a {manifest.module_kind}, not a {model.kind}")
        names = set(model.arrays())
        model.set_parameters({name: arrays[name] for name in names})
        start_step = int(manifest.metadata.get("step", 0))
        state = AdamState.from_arrays(start_step, {k: v for k, v in arrays.items() if k not in names})
        logger.info(f"Resuming {model.kind} training from step {start_step}")

    report = TrainReport()
    out_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    def validate(step: int) -> None:
        if validation is None:
            return
        nll = float(np.mean(evaluate_nll(model, validation.examples)))
        report.validation.append(ValidationPoint(step=step, nll_nats=nll, bits_per_dim=nll / (dims * LN2)))
        logger.info(f"validation at step {step}: {nll / (dims * LN2):.4f} bits/dim")

    def checkpoint(step: int, value: float, adam: AdamState) -> None:
        done = step + 1
        if out_dir is None or not cfg.checkpoint_every or done % cfg.checkpoint_every:
            return
        path = save_checkpoint(out_dir / f"step_{done}.ardx", model, adam.arrays(), {"step": done})
        report.checkpoints.append(str(path))
        validate(done)

    def loss_fn(indices: np.ndarray, params) -> Tensor:
        return F.neg(F.reduce_mean(model.logprob(data[indices], params)))

    logger.info(f"Training {model.kind} on {dataset.name} ({len(data)} examples, {cfg.max_steps} steps)")
    steps, losses, state = fit_module(model, loss_fn, len(data), cfg, state, start_step, checkpoint)

    report.steps = steps
    report.nll_nats = losses
    report.bits_per_dim = [value / (dims * LN2) for value in losses]
    if out_dir is not None:
        path = save_checkpoint(out_dir / "final.ardx", model, state.arrays(), {"step": cfg.max_steps})
        report.final_checkpoint = str(path)
    if validation is not None and (not report.validation or report.validation[-1].step != cfg.max_steps):
        validate(cfg.max_steps)
    report.wall_clock_seconds = time.perf_counter() - start
    TrainReport.model_validate(report.model_dump())
    return report


def parameter_gradient_check(
    model: ARModel,
    batch: np.ndarray,
    n_coords: int = 10,
    seed: int = 0,
    step: float = 1e-5,
) -> float:
    """Finite-difference check of the NLL gradient at random parameter coordinates."""
    rng = np.random.default_rng(seed)
    arrays = model.arrays()
    names = sorted(arrays)
    sizes = np.array([arrays[name].size for name in names])
    picks = rng.choice(int(sizes.sum()), size=min(n_coords, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for flat in picks:
        which = int(np.searchsorted(bounds, flat, side="right"))
        name = names[which]
        local = int(flat - (bounds[which - 1] if which else 0))

        def nll(weight: Tensor, name=name) -> Tensor:
            params = model.parameters()
            params[name] = weight
            return F.neg(F.reduce_sum(model.logprob(batch, params)))

        worst = max(worst, finite_diff_check(nll, arrays[name], step=step, coordinates=[local]))
    return worst


@dataclass
class TrainedClassifier:
    network: ConvClassifier
    report: ClassifierReport

    def features(self, images: np.ndarray) -> np.ndarray:
        return self.network.feature_vectors(images)

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        return self.network.predict_proba(images)


def train_classifier(
    images: np.ndarray,
    labels: np.ndarray,
    cfg: OptConfig,
    classifier_config: Optional[ClassifierConfig] = None,
) -> TrainedClassifier:
    """Train the conv classifier and report held-out accuracy.

    Labels are remapped to 0..C-1 in sorted order of the distinct values.

    Raises:
        ValueError: If fewer than two classes are present or lengths differ.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    classes, encoded = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("classifier training needs at least two classes")
    _, channels, height, width = images.shape
    base = classifier_config or ClassifierConfig()
    config = base.model_copy(
        update={"channels": channels, "height": height, "width": width, "classes": len(classes)}
    )
    network = ConvClassifier(config)

    train_idx, held_idx = split_indices(len(images), cfg.validation_fraction, cfg.seed)
    if len(held_idx) == 0:
        held_idx = train_idx
    x_train, y_train = images[train_idx], encoded[train_idx]

    def loss_fn(indices: np.ndarray, params) -> Tensor:
        return cross_entropy(network.logits(x_train[indices], params), y_train[indices])

    logger.info(f"Training classifier on {len(train_idx)} images, {len(classes)} classes")
    steps, losses, _ = fit_module(network, loss_fn, len(train_idx), cfg)
    accuracy = float(np.mean(network.predict(images[held_idx]) == encoded[held_idx]))
    logger.info(f"Held-out accuracy: {accuracy:.3f}")
    report = ClassifierReport(
        steps=steps,
        loss=losses,
        heldout_accuracy=accuracy,
        classes=[int(c) for c in classes],
        feature_width=config.feature_width,
    )
    return TrainedClassifier(network=network, report=report)
