"""RunConfig: everything one CLI invocation consumes.

Every section forbids unknown keys, so a typo in a config file fails before
any computation starts.
"""

from __future__ import annotations

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from arbench.models.configs import (
    ArCycleConfig,
    ClassifierConfig,
    GridSpec,
    MadeConfig,
    OptConfig,
    PixelConfig,
    split_list,
)


class ExperimentKind(str, Enum):
    TRAIN = "train"
    HEATMAP = "heatmap"
    OPTIMIZE = "optimize"
    DETECT = "detect"
    ARCYCLE = "arcycle"
    REPORT = "report"


class DataSource(str, Enum):
    IDX = "idx"
    SYNTHETIC = "synthetic"


class TrainTarget(str, Enum):
    MADE = "made"
    PIXEL = "pixel"
    CLASSIFIER = "classifier"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    source: DataSource = Field(default=DataSource.SYNTHETIC, description="IDX corpora or synthetic strokes")
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    ood_images: Optional[str] = Field(default=None, description="Second corpus used as the OOD probe")
    n_train: int = Field(default=2000, ge=1)
    n_test: int = Field(default=500, ge=1)
    image_size: int = Field(default=28, ge=2, description="Side of synthetic images")
    downscale: bool = Field(default=False, description="Halve image resolution")
    manifold_n: int = Field(default=10000, ge=1, description="Points in the 2-D manifold set")


class TrainSection(_Section):
    target: TrainTarget = TrainTarget.MADE
    checkpoints: int = Field(default=3, ge=1, description="Evenly spaced checkpoints to keep")


class HeatmapSection(_Section):
    checkpoint: Optional[str] = Field(default=None, description="Trained MADE; trained on the fly when unset")
    grid: GridSpec = Field(default_factory=GridSpec)
    threshold: float = Field(default=1e-3, gt=0)


class OptimizeSection(_Section):
    domain: str = Field(default="toy", description="toy or image")
    checkpoint: Optional[str] = None
    steps: int = Field(default=1000, ge=0)
    learning_rate: Optional[float] = Field(default=None, gt=0, description="1e-2 toy, 1e-3 image when unset")
    log_every: int = Field(default=100, ge=1)
    kinds: list[str] = Field(default_factory=lambda: ["digits", "noise", "black", "gray", "white"])
    per_kind: int = Field(default=3, ge=1)
    toy_starts: list[float] = Field(
        default_factory=lambda: [0.0, 1.0, 1.5, -1.0, 2.5, 0.0],
        description="Flattened (x1, x2) starting points for the toy domain",
    )

    @field_validator("kinds", "toy_starts", mode="before")
    @classmethod
    def split_strings(cls, v):
        return split_list(v)

    @field_validator("domain")
    @classmethod
    def check_domain(cls, v: str) -> str:
        if v not in ("toy", "image"):
            raise ValueError(f"domain must be toy or image, got {v!r}")
        return v


class DetectSection(_Section):
    ar_checkpoint: Optional[str] = None
    classifier_checkpoint: Optional[str] = None
    probe_count: int = Field(default=200, ge=1)
    shrinkage: float = Field(default=0.05, ge=0, le=1)
    percentile: float = Field(default=5.0, gt=0, lt=100)
    sample_sets: list[str] = Field(default_factory=list, description="IDX files of externally generated samples")

    @field_validator("sample_sets", mode="before")
    @classmethod
    def split_strings(cls, v):
        return split_list(v)


class ArCycleSection(ArCycleConfig):
    x_checkpoint: Optional[str] = Field(default=None, description="Frozen P_X (coloured digits)")
    y_checkpoint: Optional[str] = Field(default=None, description="Frozen P_Y (grey digits)")
    density_steps: int = Field(default=300, ge=0, description="Steps when P_X / P_Y are trained on the fly")


class ReportSection(_Section):
    run_dir: Optional[str] = Field(default=None, description="Run directory to re-render")


class RunConfig(_Section):
    experiment: ExperimentKind = ExperimentKind.TRAIN
    seed: int = 0
    output_dir: Optional[str] = None
    data: DataSection = Field(default_factory=DataSection)
    train: TrainSection = Field(default_factory=TrainSection)
    optim: OptConfig = Field(default_factory=OptConfig)
    made: MadeConfig = Field(default_factory=MadeConfig)
    pixel: PixelConfig = Field(default_factory=PixelConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    heatmap: HeatmapSection = Field(default_factory=HeatmapSection)
    optimize: OptimizeSection = Field(default_factory=OptimizeSection)
    detect: DetectSection = Field(default_factory=DetectSection)
    arcycle: ArCycleSection = Field(default_factory=ArCycleSection)
    report: ReportSection = Field(default_factory=ReportSection)
