"""Pydantic data models for configs, datasets, detectors and reports."""

from arbench.models.bins import BinSpec, GaussianParams, LogisticMixtureParams
from arbench.models.configs import (
    Ablation,
    ArCycleConfig,
    ClassifierConfig,
    GeneratorConfig,
    GridSpec,
    MadeConfig,
    OptConfig,
    PixelConfig,
    ZeroMassPolicy,
)
from arbench.models.dataset import Dataset
from arbench.models.detection import (
    CcgDetector,
    CurvePoint,
    DetectionMatrix,
    IntervalDetector,
    IntervalKind,
    ProbeSummary,
    Verdict,
)
from arbench.models.records import (
    ArCycleLogEntry,
    ArCycleReport,
    ClassifierReport,
    DensityField,
    GradField,
    TrainReport,
    TrajectoryRecord,
    TrajectorySummary,
    Triptych,
    ValidationPoint,
)
