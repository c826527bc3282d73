"""Staged experiment runs behind the CLI subcommands.

Each run writes its artifacts into one run directory and finishes with a
``summary.json`` listing completed stages and emitted files. Artifacts carry
no timestamps, so a (config, seed) pair reproduces them bitwise.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import pandas as pd

from arbench import ARTIFACT_VERSION, __version__
from arbench.core.config import settings
from arbench.core.errors import CheckpointError, DataUnavailableError
from arbench.density.discretized import LN2, gaussian_bin_entropy
from arbench.experiments.arcycle import ArCycleData, train_arcycle
from arbench.experiments.detection import (
    detection_table,
    fit_ccg,
    probe_summary,
    score_likelihood_curve,
    standard_columns,
)
from arbench.experiments.sample_opt import (
    density_field,
    gradient_field,
    optimize_samples,
    probe_start_set,
    summarize_trajectory,
)
from arbench.experiments.training import (
    TrainedClassifier,
    evaluate_bits_per_dim,
    holdout_split,
    train_classifier,
    train_mle,
)
from arbench.models.configs import ArCycleConfig, GeneratorConfig
from arbench.models.dataset import Dataset
from arbench.models.detection import DetectionMatrix
from arbench.models.records import ClassifierReport, GradField, records_from_frame
from arbench.models.run_config import DataSource, ExperimentKind, RunConfig, TrainTarget
from arbench.networks.base import ARModel
from arbench.networks.checkpoint import restore_module, save_checkpoint
from arbench.networks.classifier import ConvClassifier
from arbench.networks.generator import ConvGenerator
from arbench.networks.made import MadeModel
from arbench.networks.pixel import PixelARModel
from arbench.utils.datasets import downscale, gen_manifold2d, gen_stroke_images, make_probe_images
from arbench.utils.emit import (
    emit_csv,
    emit_svg_heatmap,
    emit_table,
    read_csv,
    read_provenance,
    write_image_grid,
    write_triptych,
)
from arbench.utils.idx import load_idx
from arbench.utils.plots import plot_curves

logger = logging.getLogger(__name__)


class RunResult:
    """Outcome of one experiment run."""

    def __init__(self, experiment: str, seed: int, run_dir: Path):
        self.experiment = experiment
        self.seed = seed
        self.run_dir = run_dir
        self.success: bool = False
        self.error: Optional[str] = None
        self.stages_completed: list[str] = []
        self.stages_failed: list[str] = []
        self.artifacts: list[str] = []
        self.metrics: dict[str, Any] = {}

    def add(self, path: Path) -> Path:
        self.artifacts.append(str(Path(path).relative_to(self.run_dir)))
        return path

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "artifact_version": ARTIFACT_VERSION,
            "arbench": __version__,
            "success": self.success,
            "error": self.error,
            "stages_completed": self.stages_completed,
            "stages_failed": self.stages_failed,
            "artifacts": self.artifacts,
            "metrics": self.metrics,
        }

    def write_summary(self) -> Path:
        path = self.run_dir / "summary.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


class Stages:
    """Numbered stage runner that records outcomes on a RunResult."""

    def __init__(self, result: RunResult):
        self.result = result
        self.number = 0

    def run(self, name: str, fn: Callable[[], Any]) -> Any:
        self.number += 1
        logger.info(f"Stage {self.number}: {name.replace('_', ' ')}")
        try:
            value = fn()
        except Exception as e:
            logger.error(f"Stage {self.number} ({name}) failed: {e}")
            self.result.stages_failed.append(name)
            self.result.error = f"{name}: {e}"
            raise
        self.result.stages_completed.append(name)
        return value


# --- Data ---


def _data_path(value: str) -> Path:
    path = Path(value)
    if path.is_absolute() or path.exists():
        return path
    return settings.DATA_DIR / path


def load_digits(cfg: RunConfig, split: str) -> Dataset:
    """Training or test digits: IDX corpora, or synthetic strokes offline."""
    data = cfg.data
    limit = data.n_train if split == "train" else data.n_test
    if data.source == DataSource.IDX:
        images = data.train_images if split == "train" else data.test_images
        labels = data.train_labels if split == "train" else data.test_labels
        if images is None:
            raise DataUnavailableError(f"data.{split}_images is required when data.source = idx")
        dataset = load_idx(
            _data_path(images),
            _data_path(labels) if labels else None,
            limit=limit,
            name=f"digits_{split}",
        )
    else:
        seed = cfg.seed if split == "train" else cfg.seed + 1
        dataset = gen_stroke_images(limit, size=data.image_size, seed=seed)
        dataset = dataset.subset(np.arange(len(dataset)), name=f"digits_{split}")
    return downscale(dataset) if data.downscale else dataset


def load_ood(cfg: RunConfig, shape: tuple[int, ...]) -> Dataset:
    """Second corpus for the OOD row; inverted strokes when none is configured."""
    if cfg.data.ood_images:
        dataset = load_idx(_data_path(cfg.data.ood_images), limit=cfg.detect.probe_count, name="ood")
        dataset = downscale(dataset) if cfg.data.downscale else dataset
    else:
        strokes = gen_stroke_images(cfg.detect.probe_count, size=cfg.data.image_size, seed=cfg.seed + 2)
        strokes = downscale(strokes) if cfg.data.downscale else strokes
        bins = strokes.bins
        dataset = Dataset(
            name="ood",
            examples=bins.lo + bins.hi - strokes.examples,
            bins=bins,
            provenance="inverted synthetic strokes",
        )
    if dataset.event_shape != shape:
        raise DataUnavailableError(f"OOD images have shape {dataset.event_shape}, expected {shape}")
    return dataset


# --- Models ---


def restore_ar_model(path: str, expected: type[ARModel]) -> ARModel:
    module, _, _ = restore_module(_data_path(path))
    if not isinstance(module, expected):
        raise CheckpointError(f"{path} holds a {module.kind}, expected a {expected.kind}")
    return module


def _checkpoint_every(cfg: RunConfig) -> int:
    if cfg.optim.checkpoint_every:
        return cfg.optim.checkpoint_every
    return max(cfg.optim.max_steps // cfg.train.checkpoints, 1)


def _train_curve(result: RunResult, report, name: str, validation: Optional[list] = None) -> None:
    frame = report.to_frame()
    result.add(emit_csv(frame, result.run_dir / f"{name}.csv", result.experiment, result.seed))
    value_column = "bits_per_dim" if "bits_per_dim" in frame else "loss"
    series = {name: (frame["step"], frame[value_column])}
    if validation:
        held = pd.DataFrame([point.model_dump() for point in validation])
        result.add(emit_csv(held, result.run_dir / f"{name}_validation.csv", result.experiment, result.seed))
        series["validation"] = (held["step"], held[value_column])
        result.metrics[f"{name}_validation_bits_per_dim"] = float(held["bits_per_dim"].iloc[-1])
    result.add(
        plot_curves(
            series,
            result.run_dir / f"{name}.svg",
            ylabel=value_column.replace("_", "/"),
            title=name.replace("_", " "),
        )
    )


def train_made(cfg: RunConfig, result: RunResult, subdir: str = "checkpoints") -> tuple[MadeModel, list[str]]:
    """Train MADE on the 2-D manifold; returns the model and its checkpoint paths."""
    data = gen_manifold2d(cfg.data.manifold_n, seed=cfg.seed, bins=cfg.made.bins)
    model = MadeModel(cfg.made)
    optim = cfg.optim.model_copy(update={"checkpoint_every": _checkpoint_every(cfg)})
    report = train_mle(model, data, optim, checkpoint_dir=result.run_dir / subdir)
    _train_curve(result, report, "made_train_curve", report.validation)
    oracle = gaussian_bin_entropy(cfg.made.bins) / (model.dims * LN2)
    result.metrics.update(
        {
            "final_bits_per_dim": report.final_bits_per_dim(window=min(50, len(report.steps) or 1)),
            "oracle_bits_per_dim": oracle,
        }
    )
    checkpoints = list(report.checkpoints)
    if report.final_checkpoint and (not checkpoints or Path(checkpoints[-1]).name != f"step_{optim.max_steps}.ardx"):
        checkpoints.append(report.final_checkpoint)
    for path in checkpoints:
        result.add(Path(path))
    return model, checkpoints


def train_pixel(cfg: RunConfig, result: RunResult, data: Dataset, name: str, steps: Optional[int] = None) -> PixelARModel:
    channels, height, width = data.event_shape
    config = cfg.pixel.model_copy(update={"channels": channels, "height": height, "width": width})
    model = PixelARModel(config)
    optim = cfg.optim if steps is None else cfg.optim.model_copy(update={"max_steps": steps})
    report = train_mle(model, data, optim, checkpoint_dir=result.run_dir / name)
    _train_curve(result, report, f"{name}_train_curve", report.validation)
    result.add(Path(report.final_checkpoint))
    result.metrics[f"{name}_final_bits_per_dim"] = report.final_bits_per_dim(window=min(20, len(report.steps) or 1))
    return model


def train_feature_classifier(cfg: RunConfig, result: RunResult, data: Dataset) -> TrainedClassifier:
    if data.labels is None:
        raise DataUnavailableError("classifier training needs labelled digits")
    trained = train_classifier(data.examples, data.labels, cfg.optim, cfg.classifier)
    result.add(save_checkpoint(result.run_dir / "classifier.ardx", trained.network, metadata={"classes": trained.report.classes}))
    _train_curve(result, trained.report, "classifier_train_curve")
    result.metrics["classifier_heldout_accuracy"] = trained.report.heldout_accuracy
    return trained


# --- Experiments ---


def run_train(cfg: RunConfig, result: RunResult, stages: Stages) -> None:
    target = cfg.train.target
    if target == TrainTarget.MADE:
        stages.run("train_made", lambda: train_made(cfg, result))
        return
    data = stages.run("load_data", lambda: load_digits(cfg, "train"))
    if target == TrainTarget.PIXEL:
        stages.run("train_pixel", lambda: train_pixel(cfg, result, data, "pixel"))
    else:
        stages.run("train_classifier", lambda: train_feature_classifier(cfg, result, data))


def run_heatmap(cfg: RunConfig, result: RunResult, stages: Stages) -> None:
    section = cfg.heatmap
    if section.checkpoint:
        checkpoints = [section.checkpoint]
    else:
        _, checkpoints = stages.run("train_made", lambda: train_made(cfg, result))

    def fields() -> list[dict]:
        rows = []
        for path in checkpoints:
            model = restore_ar_model(path, MadeModel)
            label = Path(path).stem
            grad = gradient_field(model, section.grid)
            density = density_field(model, section.grid)
            result.add(emit_csv(grad, result.run_dir / f"grad_field_{label}.csv", result.experiment, result.seed, checkpoint=label))
            result.add(emit_svg_heatmap(grad, result.run_dir / f"grad_field_{label}.svg", result.experiment, result.seed,
                                        title=f"gradient norm, {label}"))
            result.add(emit_svg_heatmap(density, result.run_dir / f"density_{label}.svg", result.experiment, result.seed,
                                        title=f"learned probability, {label}"))
            rows.append(
                {
                    "checkpoint": label,
                    "near_zero_fraction": grad.near_zero_fraction(section.threshold),
                    "nonzero_bands": len(grad.nonzero_column_bands(section.threshold)),
                    "max_norm": float(grad.values.max()),
                }
            )
            logger.info(f"{label}: near-zero fraction {rows[-1]['near_zero_fraction']:.3f}")
        return rows

    rows = stages.run("gradient_fields", fields)
    result.add(emit_csv(pd.DataFrame(rows), result.run_dir / "heatmap_summary.csv", result.experiment, result.seed))
    result.metrics["near_zero_fraction"] = [row["near_zero_fraction"] for row in rows]


def run_optimize(cfg: RunConfig, result: RunResult, stages: Stages) -> None:
    section = cfg.optimize
    if section.domain == "toy":
        if section.checkpoint:
            model = restore_ar_model(section.checkpoint, MadeModel)
        else:
            model, _ = stages.run("train_made", lambda: train_made(cfg, result))
        starts = np.asarray(section.toy_starts, dtype=np.float64).reshape(-1, 2)
        lr = section.learning_rate or 1e-2
        records = stages.run(
            "optimize_toy", lambda: optimize_samples(model, starts, section.steps, lr, section.log_every)
        )
        result.add(emit_csv(records, result.run_dir / "trajectory_toy.csv", result.experiment, result.seed))
        result.metrics["toy"] = summarize_trajectory(records).model_dump()
        return

    test = stages.run("load_data", lambda: load_digits(cfg, "test"))
    if section.checkpoint:
        model = restore_ar_model(section.checkpoint, PixelARModel)
    else:
        train = load_digits(cfg, "train")
        model = stages.run("train_pixel", lambda: train_pixel(cfg, result, train, "pixel"))
    lr = section.learning_rate or 1e-3

    def optimize_all() -> None:
        for kind in section.kinds:
            start = probe_start_set(kind, section.per_kind, model.event_shape, model.bins, cfg.seed, digits=test)
            records = optimize_samples(model, start, section.steps, lr, section.log_every)
            result.add(emit_csv(records, result.run_dir / f"trajectory_{kind}.csv", result.experiment, result.seed, kind=kind))
            for record in records:
                result.add(
                    write_image_grid(
                        result.run_dir / "snapshots" / f"{kind}_iter_{record.iteration:05d}.pnm",
                        record.sample,
                        model.bins,
                        comment=f"kind={kind} iteration={record.iteration} bits_per_dim={record.nll_bits_per_dim:.6f}",
                    )
                )
            result.metrics[kind] = summarize_trajectory(records).model_dump()

    stages.run("optimize_images", optimize_all)


def run_detect(cfg: RunConfig, result: RunResult, stages: Stages) -> None:
    section = cfg.detect
    train = stages.run("load_data", lambda: load_digits(cfg, "train"))
    test = load_digits(cfg, "test")
    if section.ar_checkpoint:
        model = restore_ar_model(section.ar_checkpoint, PixelARModel)
    else:
        model = stages.run("train_pixel", lambda: train_pixel(cfg, result, train, "pixel"))
    if section.classifier_checkpoint:
        network, _, _ = restore_module(_data_path(section.classifier_checkpoint))
        if not isinstance(network, ConvClassifier):
            raise CheckpointError(f"{section.classifier_checkpoint} holds a {network.kind}, expected a classifier")
        classifier = TrainedClassifier(
            network=network,
            report=ClassifierReport(heldout_accuracy=None, feature_width=network.config.feature_width),
        )
    else:
        classifier = stages.run("train_classifier", lambda: train_feature_classifier(cfg, result, train))

    def fit() -> list:
        # Same seeded split train_mle holds out, as when the pixel model is trained in this run.
        fitted, held = holdout_split(train, cfg.optim.validation_fraction, cfg.optim.seed)
        reference = held if held is not None else fitted
        if held is None:
            logger.warning("No held-out digits; fitting NLL intervals on training bits/dim")
        reference_bits = evaluate_bits_per_dim(model, reference.examples)
        ccg = fit_ccg(
            classifier.features(train.examples),
            train.labels,
            shrinkage=section.shrinkage,
            percentile=section.percentile,
            seed=cfg.seed,
        )
        result.metrics["interval_fit_examples"] = len(reference)
        result.metrics["heldout_bits_mean"] = float(reference_bits.mean())
        result.metrics["heldout_bits_std"] = float(reference_bits.std())
        return standard_columns(model, reference_bits, ccg, classifier.features)

    columns = stages.run("fit_detectors", fit)
    shape, bins, n = model.event_shape, model.bins, section.probe_count
    probes = [test.subset(np.arange(min(n, len(test))), name="test"), load_ood(cfg, shape)]
    probes += [make_probe_images(kind, n, shape, seed=cfg.seed, bins=bins) for kind in ("noise", "black", "white")]
    sample_sets = [load_idx(_data_path(p), limit=n, name=Path(p).name.split(".")[0]) for p in section.sample_sets]
    probes += sample_sets

    matrix = stages.run("detection_table", lambda: detection_table(probes, columns))
    result.add(emit_csv(matrix, result.run_dir / "detection.csv", result.experiment, result.seed))
    result.add(emit_table(matrix, result.run_dir / "detection.txt", result.experiment, result.seed))
    summaries = probe_summary(model, probes)
    result.add(emit_csv(pd.DataFrame([s.model_dump() for s in summaries]), result.run_dir / "probe_summary.csv",
                        result.experiment, result.seed))
    if sample_sets:
        points = stages.run("score_curve", lambda: score_likelihood_curve(model, classifier, sample_sets))
        frame = pd.DataFrame([p.model_dump() for p in points])
        result.add(emit_csv(frame, result.run_dir / "score_curve.csv", result.experiment, result.seed))
        result.add(plot_curves({"samples": (frame["proxy_score"], frame["bits_per_dim"])},
                               result.run_dir / "score_curve.svg", xlabel="proxy score", marker="o"))


def run_arcycle(cfg: RunConfig, result: RunResult, stages: Stages) -> None:
    section = cfg.arcycle
    gray = stages.run("load_data", lambda: load_digits(cfg, "train"))
    test = load_digits(cfg, "test")
    data = ArCycleData.from_grayscale(gray, test=test, seed=cfg.seed)

    def density_models() -> tuple[ARModel, ARModel]:
        p_x = (restore_ar_model(section.x_checkpoint, PixelARModel) if section.x_checkpoint
               else train_pixel(cfg, result, data.x, "p_x", steps=section.density_steps))
        p_y = (restore_ar_model(section.y_checkpoint, PixelARModel) if section.y_checkpoint
               else train_pixel(cfg, result, data.y, "p_y", steps=section.density_steps))
        return p_x, p_y

    p_x, p_y = stages.run("density_models", density_models)
    x_channels, y_channels = data.x.event_shape[0], data.y.event_shape[0]
    f = ConvGenerator(GeneratorConfig(in_channels=x_channels, out_channels=y_channels, seed=section.seed))
    g = ConvGenerator(GeneratorConfig(in_channels=y_channels, out_channels=x_channels, seed=section.seed + 1))
    loop = ArCycleConfig.model_validate(section.model_dump(include=set(ArCycleConfig.model_fields)))
    report = stages.run("train_arcycle", lambda: train_arcycle(f, g, p_x, p_y, data, loop, result.run_dir))

    frame = report.to_frame()
    result.add(emit_csv(frame, result.run_dir / "arcycle_log.csv", result.experiment, result.seed,
                        ablation=report.ablation, beta=f"{report.beta:.17g}"))
    result.add(plot_curves(
        {"L_cyc": (frame["iteration"], frame["l_cyc"]),
         "NLL F(x) under P_Y": (frame["iteration"], frame["nll_y_bits"]),
         "NLL G(y) under P_X": (frame["iteration"], frame["nll_x_bits"])},
        result.run_dir / "arcycle_log.svg", xlabel="iteration", ylabel="value", title=f"ARCycle ({report.ablation})",
    ))
    for shot in report.snapshots:
        result.add(write_triptych(result.run_dir / "snapshots" / f"triptych_{shot.iteration:05d}.ppm", shot,
                                  gray.bins, comment=f"ablation={report.ablation}"))
    for path in report.generator_checkpoints.values():
        result.add(Path(path))
    result.metrics.update(
        {"beta": report.beta, "final_l_cyc": report.log[-1].l_cyc, "plateau_gap_bits": report.plateau_gap()}
    )


def run_report(cfg: RunConfig, result: RunResult, stages: Stages) -> None:
    """Re-render plots, heatmaps and tables from the CSVs of an earlier run."""
    source = Path(cfg.report.run_dir) if cfg.report.run_dir else None
    if source is None or not source.is_dir():
        raise DataUnavailableError(f"report.run_dir does not name a run directory: {cfg.report.run_dir}")

    def render() -> None:
        for csv in sorted(source.glob("*.csv")):
            frame = read_csv(csv)
            header = read_provenance(csv)
            seed = int(header.get("seed", cfg.seed))
            experiment = header.get("experiment", "report")
            stem = csv.stem
            if {"step", "bits_per_dim"} <= set(frame.columns) or {"step", "loss"} <= set(frame.columns):
                column = "bits_per_dim" if "bits_per_dim" in frame else "loss"
                result.add(plot_curves({stem: (frame["step"], frame[column])}, result.run_dir / f"{stem}.svg",
                                       ylabel=column.replace("_", "/")))
            elif {"x1", "x2", "norm"} <= set(frame.columns):
                result.add(emit_svg_heatmap(_grad_field_from_frame(frame, cfg), result.run_dir / f"{stem}.svg",
                                            experiment, seed))
            elif "dataset" in frame.columns:
                columns = [c for c in frame.columns if c != "dataset"]
                matrix = DetectionMatrix(rows=[str(r) for r in frame["dataset"]], columns=columns,
                                         cells=frame[columns].to_numpy(dtype=float).tolist())
                result.add(emit_table(matrix, result.run_dir / f"{stem}.txt", experiment, seed))
            elif {"iteration", "l_cyc"} <= set(frame.columns):
                result.add(plot_curves({c: (frame["iteration"], frame[c]) for c in ("l_cyc", "nll_x_bits", "nll_y_bits")},
                                       result.run_dir / f"{stem}.svg", xlabel="iteration", ylabel="value"))
            elif {"iteration", "batch_nll_bits_per_dim"} <= set(frame.columns):
                records = records_from_frame(frame)
                result.add(plot_curves({stem: ([r.iteration for r in records], [r.nll_bits_per_dim for r in records])},
                                       result.run_dir / f"{stem}.svg", xlabel="iteration"))

    stages.run("render", render)


def _grad_field_from_frame(frame, cfg: RunConfig) -> GradField:
    x1 = np.unique(frame["x1"].to_numpy())
    x2 = np.unique(frame["x2"].to_numpy())
    grid = cfg.heatmap.grid.model_copy(
        update={"x1_range": (float(x1[0]), float(x1[-1])), "x2_range": (float(x2[0]), float(x2[-1])),
                "nx": len(x1), "ny": len(x2)}
    )
    return GradField(grid=grid, values=frame["norm"].to_numpy(dtype=float).reshape(len(x2), len(x1)))


RUNNERS = {
    ExperimentKind.TRAIN: run_train,
    ExperimentKind.HEATMAP: run_heatmap,
    ExperimentKind.OPTIMIZE: run_optimize,
    ExperimentKind.DETECT: run_detect,
    ExperimentKind.ARCYCLE: run_arcycle,
    ExperimentKind.REPORT: run_report,
}


def resolve_run_dir(cfg: RunConfig) -> Path:
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return settings.RUNS_DIR / f"{cfg.experiment.value}-seed{cfg.seed}"


def run_experiment(cfg: RunConfig) -> RunResult:
    """Run ``cfg.experiment`` end to end and write ``summary.json``.

    Errors propagate after the summary records the failed stage.
    """
    run_dir = resolve_run_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    result = RunResult(cfg.experiment.value, cfg.seed, run_dir)
    stages = Stages(result)
    logger.info(f"Starting {cfg.experiment.value} run (seed {cfg.seed}) in {run_dir}")
    (run_dir / "config.json").write_text(cfg.model_dump_json(indent=2) + "\n", encoding="utf-8")
    try:
        RUNNERS[cfg.experiment](cfg, result, stages)
        result.success = True
    finally:
        result.write_summary()
    logger.info(f"Finished {cfg.experiment.value}: {len(result.artifacts)} artifacts, stages {result.stages_completed}")
    return result
