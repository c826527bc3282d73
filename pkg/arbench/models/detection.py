"""Outlier detector models and the evaluation matrix."""

from __future__ import annotations

import math
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg


class IntervalKind(str, Enum):
    TWO_SD = "two_sd"
    ONE_SD = "one_sd"
    ONE_SIDED = "one_sided"


class Verdict(str, Enum):
    INLIER = "inlier"
    OUTLIER = "outlier"


INTERVAL_COLUMN_NAMES = {
    IntervalKind.TWO_SD: "AR-2SD",
    IntervalKind.ONE_SD: "AR-1SD",
    IntervalKind.ONE_SIDED: "AR-One-sided",
}


class IntervalDetector(BaseModel):
    """NLL interval rule fitted on training-set bits/dim."""
    model_config = ConfigDict(frozen=True)

    mu: float = Field(..., description="Mean bits/dim over the training set")
    sigma: float = Field(..., ge=0, description="Population std of bits/dim")
    kind: IntervalKind

    @property
    def lower(self) -> float:
        if self.kind == IntervalKind.ONE_SIDED:
            return -math.inf
        width = 2.0 if self.kind == IntervalKind.TWO_SD else 1.0
        return self.mu - width * self.sigma

    @property
    def upper(self) -> float:
        width = 1.0 if self.kind == IntervalKind.ONE_SD else 2.0
        return self.mu + width * self.sigma

    def accepts(self, bits_per_dim) -> np.ndarray:
        """Closed-interval membership, vectorized."""
        values = np.asarray(bits_per_dim, dtype=np.float64)
        return (values >= self.lower) & (values <= self.upper)


class CcgDetector(BaseModel):
    """Class-conditional Gaussians with a tied, shrunk covariance."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    classes: list[int] = Field(..., min_length=1)
    means: np.ndarray = Field(..., description="(classes, d) class means")
    covariance: np.ndarray = Field(..., description="(d, d) tied covariance")
    shrinkage: float = Field(..., ge=0, le=1)
    threshold: float = Field(..., description="Minimum max-class log-likelihood for an inlier")

    @model_validator(mode="after")
    def check_covariance(self) -> "CcgDetector":
        d = self.means.shape[1]
        if self.covariance.shape != (d, d):
            raise ValueError(f"covariance shape {self.covariance.shape} does not match feature dim {d}")
        if not np.allclose(self.covariance, self.covariance.T):
            raise ValueError("covariance must be symmetric")
        return self

    @property
    def dims(self) -> int:
        return self.means.shape[1]

    @cached_property
    def cholesky_factor(self) -> tuple[np.ndarray, float]:
        chol = linalg.cholesky(self.covariance, lower=True)
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return chol, log_det

    def class_loglik(self, features: np.ndarray) -> np.ndarray:
        """(n, classes) Gaussian log-likelihoods."""
        chol, log_det = self.cholesky_factor
        d = self.dims
        out = np.empty((len(features), len(self.classes)))
        for k, mean in enumerate(self.means):
            whitened = linalg.solve_triangular(chol, (features - mean).T, lower=True)
            maha = np.sum(whitened * whitened, axis=0)
            out[:, k] = -0.5 * (d * math.log(2.0 * math.pi) + log_det + maha)
        return out

    def with_threshold(self, threshold: float) -> "CcgDetector":
        return self.model_copy(update={"threshold": threshold})


class DetectionMatrix(BaseModel):
    """Percent classified in-distribution per (probe set, detector)."""
    rows: list[str] = Field(default_factory=list)
    columns: list[str] = Field(default_factory=list)
    cells: list[list[float]] = Field(default_factory=list)

    @field_validator("cells")
    @classmethod
    def check_cells(cls, v: list[list[float]]) -> list[list[float]]:
        for row in v:
            for cell in row:
                if not 0.0 <= cell <= 100.0:
                    raise ValueError(f"cell {cell} outside [0, 100]")
        return v

    @model_validator(mode="after")
    def check_layout(self) -> "DetectionMatrix":
        if len(self.cells) != len(self.rows):
            raise ValueError("one cell row per probe set is required")
        if any(len(row) != len(self.columns) for row in self.cells):
            raise ValueError("every row needs one cell per detector")
        return self

    def cell(self, row: str, column: str) -> float:
        return self.cells[self.rows.index(row)][self.columns.index(column)]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.cells, columns=self.columns)
        frame.insert(0, "dataset", self.rows)
        return frame

    def render_text(self) -> str:
        """Aligned table: datasets as rows, detectors as columns, one decimal."""
        header = ["Dataset"] + self.columns
        body = [[name] + [f"{cell:.1f}" for cell in row] for name, row in zip(self.rows, self.cells)]
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = []
        for r in [header] + body:
            first = r[0].ljust(widths[0])
            rest = [value.rjust(width) for value, width in zip(r[1:], widths[1:])]
            lines.append("  ".join([first] + rest).rstrip())
        lines.insert(1, "-" * max(len(lines[0]), 1))
        return "\n".join(lines) + "\n"


class ProbeSummary(BaseModel):
    """Bits/dim statistics of one probe set under an AR model."""
    name: str
    count: int
    mean_bits: float
    std_bits: float
    min_bits: float
    max_bits: float


class CurvePoint(BaseModel):
    """One sample set on the proxy-score versus bits/dim curve."""
    name: str
    proxy_score: float
    bits_per_dim: float
    checkpoint: Optional[str] = None
