"""Discretization grid and likelihood-head parameter models."""

from __future__ import annotations

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import special


class BinSpec(BaseModel):
    """Evenly spaced bins identified by their centres.

    The two edge bins absorb the open tails, so the bins partition the
    real line.
    """
    model_config = ConfigDict(frozen=True)

    lo: float = Field(..., description="Centre of the lowest bin")
    hi: float = Field(..., description="Centre of the highest bin")
    count: int = Field(..., ge=2, description="Number of bins")

    @model_validator(mode="after")
    def check_range(self) -> "BinSpec":
        if not self.hi > self.lo:
            raise ValueError(f"hi ({self.hi}) must exceed lo ({self.lo})")
        return self

    @classmethod
    def toy(cls) -> "BinSpec":
        """51 bins on [-5, 5]; a bin centre sits exactly at 0."""
        return cls(lo=-5.0, hi=5.0, count=51)

    @classmethod
    def image(cls) -> "BinSpec":
        """256 pixel levels rescaled to [-1, 1]."""
        return cls(lo=-1.0, hi=1.0, count=256)

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / (self.count - 1)

    def centers(self) -> np.ndarray:
        return self.lo + self.width * np.arange(self.count)

    def bin_index(self, x) -> np.ndarray:
        """Index of the bin containing each value (tails clip to edge bins)."""
        position = np.rint((np.asarray(x, dtype=np.float64) - self.lo) / self.width)
        return np.clip(position, 0, self.count - 1).astype(np.int64)

    def snap(self, x) -> np.ndarray:
        """Nearest bin centre for each value."""
        return self.centers()[self.bin_index(x)]

    def covers(self, x) -> bool:
        """True when every value lies inside the outer bin edges."""
        values = np.asarray(x, dtype=np.float64)
        half = self.width / 2.0
        return bool(np.all((values >= self.lo - half) & (values <= self.hi + half)))

    def from_levels(self, levels) -> np.ndarray:
        """Map integer levels 0..count-1 to bin centres."""
        return self.lo + self.width * np.asarray(levels, dtype=np.float64)


class GaussianParams(BaseModel):
    """Location and log-scale of a discretized Gaussian head."""
    mu: float = Field(..., description="Mean")
    log_sigma: float = Field(..., description="Natural log of the standard deviation")

    @field_validator("mu", "log_sigma")
    @classmethod
    def check_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("Gaussian parameters must be finite")
        return v

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)


class LogisticMixtureParams(BaseModel):
    """K components of a discretized logistic mixture."""
    logit_weights: list[float] = Field(..., min_length=1, description="Unnormalized log mixture weights")
    mu: list[float] = Field(..., min_length=1, description="Component locations")
    log_scale: list[float] = Field(..., min_length=1, description="Component log scales")

    @model_validator(mode="after")
    def check_lengths(self) -> "LogisticMixtureParams":
        if not len(self.logit_weights) == len(self.mu) == len(self.log_scale):
            raise ValueError(
                f"component lists differ in length: {len(self.logit_weights)}, "
                f"{len(self.mu)}, {len(self.log_scale)}"
            )
        return self

    @property
    def components(self) -> int:
        return len(self.mu)

    @property
    def weights(self) -> np.ndarray:
        return special.softmax(np.asarray(self.logit_weights, dtype=np.float64))
