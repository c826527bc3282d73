"""ARCycle: two generators trained against frozen AR densities plus cycle consistency.

F maps domain X (coloured digits) to Y (grey digits); G maps Y back to X.
P_X and P_Y are AR models trained beforehand on real images of their domain
and never updated here.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from arbench.autodiff import functional as ops
from arbench.autodiff.tape import Tape
from arbench.autodiff.tensor import Tensor, as_tensor
from arbench.core.errors import ArCycleDivergedError, DomainError, NonFiniteError, ShapeError
from arbench.density.discretized import LN2
from arbench.experiments.training import AdamState, adam_step, batch_indices, evaluate_bits_per_dim, fit_module
from arbench.models.configs import Ablation, ArCycleConfig, OptConfig
from arbench.models.dataset import Dataset
from arbench.models.records import ArCycleLogEntry, ArCycleReport, Triptych
from arbench.networks.base import ARModel, Params
from arbench.networks.checkpoint import save_checkpoint
from arbench.utils.datasets import colorize_mnist, split_dataset

logger = logging.getLogger(__name__)


def gaussian_kernel1d(sigma: float, truncate: float = 3.0) -> np.ndarray:
    """Normalized 1-D Gaussian taps over radius ceil(truncate * sigma)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(truncate * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (offsets / sigma) ** 2)
    return taps / taps.sum()


def gaussian_blur(image, sigma: float, truncate: float = 3.0) -> Tensor:
    """Separable Gaussian blur over the last two axes with reflected edges.

    Accepts (H, W), (C, H, W) or (B, C, H, W); every leading slice is blurred
    independently and the output keeps the input shape.
    """
    x = as_tensor(image)
    if x.ndim < 2 or x.ndim > 4:
        raise ShapeError(f"gaussian_blur expects 2 to 4 axes, got shape {x.shape}")
    taps = gaussian_kernel1d(sigma, truncate)
    radius = len(taps) // 2
    height, width = x.shape[-2:]
    planes = int(np.prod(x.shape[:-2])) if x.ndim > 2 else 1
    h = ops.reshape(x, (planes, 1, height, width))
    if radius:
        h = ops.pad(h, [(0, 0), (0, 0), (radius, radius), (radius, radius)], mode="reflect")
        h = ops.conv2d(h, Tensor(taps.reshape(1, 1, 1, -1)))
        h = ops.conv2d(h, Tensor(taps.reshape(1, 1, -1, 1)))
    return ops.reshape(h, x.shape)


def _l1(a: Tensor, b) -> Tensor:
    return ops.reduce_mean(ops.absolute(ops.sub(a, b)))


def cycle_loss(F, G, batch_x, batch_y, params_f: Optional[Params] = None, params_g: Optional[Params] = None) -> Tensor:
    """mean |G(F(x)) - x| + mean |F(G(y)) - y|, each averaged over examples and pixels.

    Raises:
        ShapeError: If a round trip does not return its input's shape.
    """
    x, y = as_tensor(batch_x), as_tensor(batch_y)
    x_back = G.forward(F.forward(x, params_f), params_g)
    y_back = F.forward(G.forward(y, params_g), params_f)
    if x_back.shape != x.shape or y_back.shape != y.shape:
        raise ShapeError(
            f"round trips changed shape: x {x.shape} -> {x_back.shape}, y {y.shape} -> {y_back.shape}"
        )
    return ops.add(_l1(x_back, x), _l1(y_back, y))


def nll_loss(
    P: ARModel,
    F,
    batch_x,
    params: Optional[Params] = None,
    blur_sigma: Optional[float] = None,
    blur_truncate: float = 3.0,
) -> Tensor:
    """Mean -log P(F(x)) in nats; P's parameters enter as constants.

    With ``blur_sigma`` the translation is blurred before it is scored.
    """
    translated = F.forward(as_tensor(batch_x), params)
    if blur_sigma:
        translated = gaussian_blur(translated, blur_sigma, blur_truncate)
    return ops.neg(ops.reduce_mean(P.logprob(translated)))


@dataclass
class ArCycleTerms:
    """The three loss terms for one pair of batches."""
    nll_y: Tensor
    nll_x: Tensor
    cyc: Tensor

    def values(self) -> dict[str, float]:
        return {"nll_y": self.nll_y.item(), "nll_x": self.nll_x.item(), "cyc": self.cyc.item()}


def arcycle_terms(
    F,
    G,
    P_X: ARModel,
    P_Y: ARModel,
    batch_x,
    batch_y,
    params_f: Optional[Params] = None,
    params_g: Optional[Params] = None,
    blur_sigma: Optional[float] = None,
    blur_truncate: float = 3.0,
) -> ArCycleTerms:
    return ArCycleTerms(
        nll_y=nll_loss(P_Y, F, batch_x, params_f, blur_sigma, blur_truncate),
        nll_x=nll_loss(P_X, G, batch_y, params_g, blur_sigma, blur_truncate),
        cyc=cycle_loss(F, G, batch_x, batch_y, params_f, params_g),
    )


def combine_terms(terms: ArCycleTerms, beta: float, ablation: Ablation = Ablation.FULL) -> Tensor:
    """Objective of the selected ablation.

    A term whose weight is zero is left out of the sum, so ``nll_only`` and
    ``full`` with beta = 0 build the same expression.
    """
    ablation = Ablation(ablation)
    if ablation == Ablation.CYC_ONLY:
        return terms.cyc
    total = ops.add(terms.nll_y, terms.nll_x)
    if ablation != Ablation.NLL_ONLY and beta != 0:
        total = ops.add(total, ops.mul(terms.cyc, float(beta)))
    return total


def arcycle_total(
    F,
    G,
    P_X: ARModel,
    P_Y: ARModel,
    batches: tuple,
    beta: float,
    params_f: Optional[Params] = None,
    params_g: Optional[Params] = None,
    ablation: Ablation = Ablation.FULL,
    blur_sigma: Optional[float] = None,
) -> Tensor:
    """L_NLL(P_Y, F) + L_NLL(P_X, G) + beta * L_cyc (or the ablation's subset)."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    batch_x, batch_y = batches
    sigma = blur_sigma if Ablation(ablation) == Ablation.BLUR else None
    terms = arcycle_terms(F, G, P_X, P_Y, batch_x, batch_y, params_f, params_g, sigma)
    return combine_terms(terms, beta, ablation)


def objective_gradients(
    F,
    G,
    P_X: ARModel,
    P_Y: ARModel,
    batch_x,
    batch_y,
    beta: float,
    ablation: Ablation = Ablation.FULL,
    blur_sigma: Optional[float] = None,
    blur_truncate: float = 3.0,
    wrt: str = "both",
) -> tuple[ArCycleTerms, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Objective terms plus gradients for F's and G's parameters.

    Args:
        wrt: ``F``, ``G`` or ``both``; the other generator enters as constants.

    Returns:
        (terms, grads of F by parameter name, grads of G by parameter name).
    """
    if wrt not in ("F", "G", "both"):
        raise ValueError(f"wrt must be F, G or both, got {wrt!r}")
    sigma = blur_sigma if Ablation(ablation) == Ablation.BLUR else None
    with Tape() as tape:
        leaves_f = F.trainable() if wrt in ("F", "both") else None
        leaves_g = G.trainable() if wrt in ("G", "both") else None
        terms = arcycle_terms(F, G, P_X, P_Y, batch_x, batch_y, leaves_f, leaves_g, sigma, blur_truncate)
        total = combine_terms(terms, beta, ablation)
        # A loss no trainable leaf reaches has zero gradient everywhere.
        grads = tape.backward(total) if tape.tracks(total) else {}

    def collect(leaves: Optional[dict[str, Tensor]]) -> dict[str, np.ndarray]:
        if not leaves:
            return {}
        return {name: grads.get(leaf, np.zeros(leaf.shape)) for name, leaf in leaves.items()}

    return terms, collect(leaves_f), collect(leaves_g)


@dataclass
class ArCycleData:
    """Unpaired domain sets plus optional paired sets and a held-out Y set."""
    x: Dataset
    y: Dataset
    paired_x: Optional[np.ndarray] = None
    paired_y: Optional[np.ndarray] = None
    y_test: Optional[Dataset] = None

    @classmethod
    def from_grayscale(cls, gray: Dataset, test: Optional[Dataset] = None, seed: int = 0) -> "ArCycleData":
        """Split grey digits in two halves: one is coloured to form X, the other is Y.

        The paired sets are Y with its own colourization, available by
        construction for supervised pretraining.
        """
        for_x, for_y = split_dataset(gray, 0.5, seed)
        colored = colorize_mnist(for_x, seed=seed)
        paired = colorize_mnist(for_y, seed=seed + 1)
        return cls(
            x=colored,
            y=for_y.subset(np.arange(len(for_y)), name="gray_digits"),
            paired_x=paired.examples,
            paired_y=for_y.examples,
            y_test=test,
        )


def _check_finite(iteration: int, terms: dict[str, float]) -> None:
    if not all(math.isfinite(v) for v in terms.values()):
        raise ArCycleDivergedError(iteration, terms)


def pretrain_generators(F, G, data: ArCycleData, cfg: ArCycleConfig) -> list[float]:
    """Paired L1 regression of F (x -> y) and G (y -> x); returns per-step F + G loss."""
    if data.paired_x is None or data.paired_y is None:
        raise ValueError("pretraining needs paired sets")
    opt = OptConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        max_steps=cfg.pretrain_steps,
        seed=cfg.seed,
        log_every=max(cfg.pretrain_steps // 4, 1),
    )
    px, py = data.paired_x, data.paired_y
    logger.info(f"Pretraining generators on {len(px)} pairs for {cfg.pretrain_steps} steps")
    _, f_losses, _ = fit_module(F, lambda idx, p: _l1(F.forward(px[idx], p), py[idx]), len(px), opt)
    _, g_losses, _ = fit_module(G, lambda idx, p: _l1(G.forward(py[idx], p), px[idx]), len(px), opt)
    return [a + b for a, b in zip(f_losses, g_losses)]


def snapshot(F, G, real: np.ndarray, iteration: int) -> Triptych:
    """Real, translated F(x) and reconstructed G(F(x)) images."""
    translated = F.forward(real).data
    reconstructed = G.forward(translated).data
    return Triptych(iteration=iteration, real=np.array(real), translated=translated, reconstructed=reconstructed)


def auto_beta(terms: ArCycleTerms) -> float:
    """beta making beta * L_cyc equal the summed NLL terms."""
    values = terms.values()
    if values["cyc"] <= 0:
        return 1.0
    return (values["nll_y"] + values["nll_x"]) / values["cyc"]


def train_arcycle(
    F,
    G,
    P_X: ARModel,
    P_Y: ARModel,
    data: ArCycleData,
    cfg: ArCycleConfig,
    output_dir: Optional[Union[str, Path]] = None,
) -> ArCycleReport:
    """Alternating Adam updates of F then G under the selected ablation.

    Snapshots are taken at iteration 0, every ``snapshot_every`` iterations
    and after the last update. With ``output_dir`` the generators are
    checkpointed at each snapshot.

    Raises:
        ArCycleDivergedError: If any loss term becomes non-finite.
    """
    frozen = (P_X.fingerprint(), P_Y.fingerprint())
    ablation = Ablation(cfg.ablation)
    blur = cfg.blur_sigma if ablation == Ablation.BLUR else None
    opt = cfg.optimizer()
    out_dir = Path(output_dir) if output_dir is not None else None
    real = data.x.examples[: cfg.snapshot_count]

    pretrain_loss: list[float] = []
    if cfg.pretrain_steps:
        pretrain_loss = pretrain_generators(F, G, data, cfg)

    def batches(iteration: int) -> tuple[np.ndarray, np.ndarray]:
        ix = batch_indices(len(data.x), cfg.batch_size, cfg.seed, 2 * iteration)
        iy = batch_indices(len(data.y), cfg.batch_size, cfg.seed, 2 * iteration + 1)
        return data.x.examples[ix], data.y.examples[iy]

    beta = cfg.beta
    if ablation == Ablation.NLL_ONLY:
        beta = 0.0
    elif beta is None:
        bx, by = batches(0)
        beta = auto_beta(arcycle_terms(F, G, P_X, P_Y, bx, by, blur_sigma=blur, blur_truncate=cfg.blur_truncate))
        logger.info(f"Auto-scaled beta to {beta:.6g}")

    report = ArCycleReport(beta=beta, ablation=ablation.value, pretrain_loss=pretrain_loss)
    state_f = AdamState.zeros_like(F.arrays()) if hasattr(F, "arrays") else None
    state_g = AdamState.zeros_like(G.arrays()) if hasattr(G, "arrays") else None

    def record(iteration: int, terms: ArCycleTerms) -> None:
        values = terms.values()
        _check_finite(iteration, values)
        report.log.append(
            ArCycleLogEntry(
                iteration=iteration,
                l_cyc=values["cyc"],
                nll_x_bits=values["nll_x"] / (P_X.dims * LN2),
                nll_y_bits=values["nll_y"] / (P_Y.dims * LN2),
                total=combine_terms(terms, beta, ablation).item(),
            )
        )

    def take_snapshot(iteration: int) -> None:
        shot = snapshot(F, G, real, iteration)
        if out_dir is not None:
            for label, module in (("F", F), ("G", G)):
                if hasattr(module, "arrays"):
                    path = save_checkpoint(
                        out_dir / "generators" / f"{label}_iter_{iteration:05d}.ardx",
                        module,
                        metadata={"iteration": iteration, "ablation": ablation.value},
                    )
                    report.generator_checkpoints[f"{label}@{iteration}"] = str(path)
        report.snapshots.append(shot)

    logger.info(
        f"ARCycle ({ablation.value}, beta={beta:.6g}) for {cfg.iterations} iterations, batch {cfg.batch_size}"
    )
    for iteration in range(cfg.iterations):
        if iteration % cfg.snapshot_every == 0:
            take_snapshot(iteration)
        bx, by = batches(iteration)
        try:
            terms, grads_f, _ = objective_gradients(
                F, G, P_X, P_Y, bx, by, beta, ablation, blur, cfg.blur_truncate, wrt="F"
            )
            record(iteration, terms)
            if state_f is not None:
                updated, state_f = adam_step(F.arrays(), grads_f, state_f, opt)
                F.set_parameters(updated)
            _, _, grads_g = objective_gradients(
                F, G, P_X, P_Y, bx, by, beta, ablation, blur, cfg.blur_truncate, wrt="G"
            )
            if state_g is not None:
                updated, state_g = adam_step(G.arrays(), grads_g, state_g, opt)
                G.set_parameters(updated)
        except (NonFiniteError, DomainError) as e:
            last = report.log[-1].model_dump() if report.log else {}
            raise ArCycleDivergedError(iteration, {"error": str(e), **last}) from e
        if (iteration + 1) % max(cfg.snapshot_every, 1) == 0:
            entry = report.log[-1]
            logger.info(
                f"iteration {iteration + 1}/{cfg.iterations}: l_cyc={entry.l_cyc:.4f} "
                f"nll_x={entry.nll_x_bits:.4f} nll_y={entry.nll_y_bits:.4f} bits/dim"
            )

    bx, by = batches(cfg.iterations)
    record(cfg.iterations, arcycle_terms(F, G, P_X, P_Y, bx, by, blur_sigma=blur, blur_truncate=cfg.blur_truncate))
    take_snapshot(cfg.iterations)

    if data.y_test is not None:
        report.reference_nll_y_bits = float(np.mean(evaluate_bits_per_dim(P_Y, data.y_test.examples)))
        logger.info(
            f"P_Y held-out NLL {report.reference_nll_y_bits:.4f} bits/dim; "
            f"translated plateau gap {report.plateau_gap():.4f}"
        )
    if (P_X.fingerprint(), P_Y.fingerprint()) != frozen:
        raise RuntimeError("frozen density models changed during ARCycle training")
    return report
