"""Reports and logs produced by training and sample optimization runs."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from arbench.models.configs import GridSpec


class ValidationPoint(BaseModel):
    step: int
    nll_nats: float
    bits_per_dim: float


class TrainReport(BaseModel):
    """Per-step training curve of a maximum-likelihood run."""
    steps: list[int] = Field(default_factory=list, description="Update indices")
    nll_nats: list[float] = Field(default_factory=list, description="Mean batch NLL before each update")
    bits_per_dim: list[float] = Field(default_factory=list)
    validation: list[ValidationPoint] = Field(default_factory=list)
    wall_clock_seconds: float = Field(default=0.0, description="Elapsed time; not part of the CSV")
    checkpoints: list[str] = Field(default_factory=list)
    final_checkpoint: Optional[str] = Field(default=None)

    @model_validator(mode="after")
    def check_steps(self) -> "TrainReport":
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("step indices must be strictly increasing")
        if not len(self.steps) == len(self.nll_nats) == len(self.bits_per_dim):
            raise ValueError("curve columns differ in length")
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"step": self.steps, "nll_nats": self.nll_nats, "bits_per_dim": self.bits_per_dim}
        )

    def final_bits_per_dim(self, window: int = 1) -> float:
        tail = self.bits_per_dim[-window:]
        return float(np.mean(tail))


class ClassifierReport(BaseModel):
    steps: list[int] = Field(default_factory=list)
    loss: list[float] = Field(default_factory=list, description="Mean cross-entropy in nats")
    heldout_accuracy: Optional[float] = Field(default=None, ge=0, le=1, description="None for a restored classifier")
    classes: list[int] = Field(default_factory=list)
    feature_width: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"step": self.steps, "loss": self.loss})


class TrajectoryRecord(BaseModel):
    """State of an input-space optimization run at a logged iteration."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    iteration: int = Field(..., ge=0)
    sample: np.ndarray = Field(..., description="Batch snapshot")
    nll_bits_per_dim: float = Field(..., description="Batch mean NLL in bits per dim")
    grad_norm: float = Field(..., ge=0, description="L2 norm of the input gradient over the batch")
    per_sample_bits: list[float] = Field(default_factory=list)
    per_sample_grad_norm: list[float] = Field(default_factory=list)
    step_norm: float = Field(default=0.0, ge=0, description="Largest per-sample move on the last step")

    @field_validator("nll_bits_per_dim")
    @classmethod
    def check_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("trajectory NLL must be finite")
        return v


MAX_INLINE_COORDINATES = 16


def trajectory_frame(records: list[TrajectoryRecord]) -> pd.DataFrame:
    """One row per (iteration, sample) with that sample's scores.

    Low-dimensional samples also get their coordinates as ``x0, x1, ...``
    columns; image snapshots are written separately.
    """
    columns = ["iteration", "sample", "nll_bits_per_dim", "grad_norm",
               "batch_nll_bits_per_dim", "batch_grad_norm", "step_norm"]
    inline = 0
    if records:
        per_sample = int(np.prod(records[0].sample.shape[1:]))
        if per_sample <= MAX_INLINE_COORDINATES:
            inline = per_sample
            columns += [f"x{i}" for i in range(inline)]
    rows = []
    for record in records:
        flat = record.sample.reshape(len(record.sample), -1)
        for index, (bits, norm) in enumerate(zip(record.per_sample_bits, record.per_sample_grad_norm)):
            row = [record.iteration, index, bits, norm,
                   record.nll_bits_per_dim, record.grad_norm, record.step_norm]
            if inline:
                row += [float(v) for v in flat[index]]
            rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def records_from_frame(frame: pd.DataFrame) -> list[TrajectoryRecord]:
    """Rebuild TrajectoryRecords from a frame written by ``trajectory_frame``."""
    coordinate_columns = [c for c in frame.columns if c.startswith("x") and c[1:].isdigit()]
    records = []
    for iteration, group in frame.groupby("iteration", sort=True):
        group = group.sort_values("sample")
        first = group.iloc[0]
        if coordinate_columns:
            sample = group[coordinate_columns].to_numpy(dtype=np.float64)
        else:
            sample = np.zeros((len(group), 0))
        records.append(
            TrajectoryRecord(
                iteration=int(iteration),
                sample=sample,
                nll_bits_per_dim=float(first["batch_nll_bits_per_dim"]),
                grad_norm=float(first["batch_grad_norm"]),
                per_sample_bits=[float(v) for v in group["nll_bits_per_dim"]],
                per_sample_grad_norm=[float(v) for v in group["grad_norm"]],
                step_norm=float(first["step_norm"]),
            )
        )
    return records


class TrajectorySummary(BaseModel):
    start_bits: float
    min_bits: float
    max_bits: float
    final_bits: float
    initial_increase: bool = Field(..., description="NLL rose above its start before decreasing")


class GridField(BaseModel):
    """A scalar quantity evaluated over a GridSpec, rows along x2."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: GridSpec
    values: np.ndarray = Field(..., description="(ny, nx) array")
    quantity: str = Field(default="value")

    @model_validator(mode="after")
    def check_values(self) -> "GridField":
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.ny, self.grid.nx):
            raise ValueError(f"values shape {self.values.shape} does not match grid ({self.grid.ny}, {self.grid.nx})")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.quantity} values must be finite and non-negative")
        return self

    def to_frame(self) -> pd.DataFrame:
        points = self.grid.points()
        return pd.DataFrame({"x1": points[:, 0], "x2": points[:, 1], self.column: self.values.ravel()})

    @property
    def column(self) -> str:
        return self.quantity


class GradField(GridField):
    """Per-cell L2 norm of the input gradient of log p."""
    quantity: str = "norm"

    @property
    def norms(self) -> np.ndarray:
        return self.values

    def near_zero_fraction(self, threshold: float = 1e-3) -> float:
        return float(np.mean(self.values < threshold))

    def column_maxima(self) -> np.ndarray:
        return self.values.max(axis=0)

    def nonzero_column_bands(self, threshold: float = 1e-3) -> list[tuple[int, int]]:
        """Contiguous runs of columns holding any cell at or above ``threshold``.

        Returns inclusive (first, last) column index pairs.
        """
        active = self.column_maxima() >= threshold
        bands = []
        start = None
        for col, on in enumerate(active):
            if on and start is None:
                start = col
            elif not on and start is not None:
                bands.append((start, col - 1))
                start = None
        if start is not None:
            bands.append((start, len(active) - 1))
        return bands


class DensityField(GridField):
    """Learned probability mass of the bin containing each grid point."""
    quantity: str = "probability"


class ArCycleLogEntry(BaseModel):
    iteration: int = Field(..., ge=0)
    l_cyc: float = Field(..., description="Cycle loss per pixel")
    nll_x_bits: float = Field(..., description="NLL of G(y) under P_X in bits/dim")
    nll_y_bits: float = Field(..., description="NLL of F(x) under P_Y in bits/dim")
    total: float = Field(..., description="Objective value of the active ablation")


class Triptych(BaseModel):
    """Real, translated and reconstructed images at one iteration."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    iteration: int = Field(..., ge=0)
    real: np.ndarray
    translated: np.ndarray
    reconstructed: np.ndarray
    path: Optional[str] = None


class ArCycleReport(BaseModel):
    """Per-iteration ARCycle losses plus snapshots."""
    beta: float = Field(..., ge=0)
    ablation: str
    log: list[ArCycleLogEntry] = Field(default_factory=list)
    snapshots: list[Triptych] = Field(default_factory=list)
    pretrain_loss: list[float] = Field(default_factory=list)
    reference_nll_y_bits: Optional[float] = Field(default=None, description="P_Y test-set NLL in bits/dim")
    generator_checkpoints: dict[str, str] = Field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "iteration": e.iteration,
                    "l_cyc": e.l_cyc,
                    "nll_x_bits": e.nll_x_bits,
                    "nll_y_bits": e.nll_y_bits,
                }
                for e in self.log
            ],
            columns=["iteration", "l_cyc", "nll_x_bits", "nll_y_bits"],
        )

    def plateau_gap(self, window: int = 10) -> Optional[float]:
        """Mean translated-image NLL over the last ``window`` entries minus the reference."""
        if self.reference_nll_y_bits is None or not self.log:
            return None
        tail = [e.nll_y_bits for e in self.log[-window:]]
        return float(np.mean(tail)) - self.reference_nll_y_bits
