"""Hyperparameter models for networks, optimizers and experiments."""

from __future__ import annotations

from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from arbench.models.bins import BinSpec


def split_list(value):
    """Accept "64,64" style strings from run config files."""
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
        return [p for p in parts if p]
    return value


class ZeroMassPolicy(str, Enum):
    """How an example with a floored conditional is scored.

    PER_DIM sums the individually floored conditionals. JOINT assigns the
    whole example ``dims * floor`` with zero gradient, standing in for the
    -inf log-probability of a point outside the support.
    """
    PER_DIM = "per_dim"
    JOINT = "joint"


class Ablation(str, Enum):
    """Which ARCycle loss terms are active."""
    FULL = "full"
    NLL_ONLY = "nll_only"
    CYC_ONLY = "cyc_only"
    BLUR = "blur"


class OptConfig(BaseModel):
    """Adaptive-moment optimizer and loop settings."""
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(default=1e-3, gt=0, description="Step size")
    beta1: float = Field(default=0.9, ge=0, lt=1, description="First-moment decay")
    beta2: float = Field(default=0.999, ge=0, lt=1, description="Second-moment decay")
    epsilon: float = Field(default=1e-8, gt=0, description="Denominator stabilizer")
    batch_size: int = Field(default=64, ge=1, description="Examples per step")
    max_steps: int = Field(default=1000, ge=0, description="Number of updates")
    seed: int = Field(default=0, description="Seed for batch selection and splits")
    checkpoint_every: int = Field(default=0, ge=0, description="Checkpoint period in steps; 0 disables")
    log_every: int = Field(default=100, ge=1, description="Progress log period in steps")
    validation_fraction: float = Field(default=0.1, ge=0, lt=1, description="Held-out share of the data")


class MadeConfig(BaseModel):
    """Masked MLP with a discretized Gaussian head per dimension."""
    model_config = ConfigDict(extra="forbid")

    dims: int = Field(default=2, ge=1, description="Input dimensionality D")
    hidden_sizes: list[int] = Field(default_factory=lambda: [64, 64], description="Hidden layer widths")
    ordering: Optional[list[int]] = Field(default=None, description="Autoregressive ordering; natural when unset")
    seed: int = Field(default=0, description="Seed for masks and weights")
    zero_init_head: bool = Field(default=True, description="Start the head at mu=0, log_sigma=0")
    floor_logprob: float = Field(default=-40.0, lt=0, description="Log-probability floor in nats")
    zero_mass_policy: ZeroMassPolicy = Field(default=ZeroMassPolicy.JOINT)
    bins: BinSpec = Field(default_factory=BinSpec.toy)

    @field_validator("hidden_sizes", "ordering", mode="before")
    @classmethod
    def split_strings(cls, v):
        return split_list(v)

    @field_validator("hidden_sizes")
    @classmethod
    def check_widths(cls, v: list[int]) -> list[int]:
        if any(w < 1 for w in v):
            raise ValueError(f"hidden widths must be positive, got {v}")
        return v

    @model_validator(mode="after")
    def check_ordering(self) -> "MadeConfig":
        if self.ordering is not None and sorted(self.ordering) != list(range(self.dims)):
            raise ValueError(f"ordering {self.ordering} is not a permutation of 0..{self.dims - 1}")
        return self


class PixelConfig(BaseModel):
    """Masked-convolution pixel model with a logistic mixture head."""
    model_config = ConfigDict(extra="forbid")

    channels: int = Field(default=1, ge=1)
    height: int = Field(default=28, ge=1)
    width: int = Field(default=28, ge=1)
    hidden_channels: int = Field(default=32, ge=1)
    layers: int = Field(default=5, ge=2, description="Masked conv layers including the 1x1 head")
    first_kernel: int = Field(default=7, ge=1, description="Odd kernel size of the type-A layer")
    kernel: int = Field(default=3, ge=1, description="Odd kernel size of the type-B layers")
    mixtures: int = Field(default=5, ge=1, description="Logistic components per pixel")
    min_log_scale: float = Field(default=-7.0, description="Lower clamp on component log scales")
    seed: int = Field(default=0)
    floor_logprob: float = Field(default=-40.0, lt=0)
    zero_mass_policy: ZeroMassPolicy = Field(default=ZeroMassPolicy.PER_DIM)
    bins: BinSpec = Field(default_factory=BinSpec.image)

    @field_validator("first_kernel", "kernel")
    @classmethod
    def check_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got {v}")
        return v


class ClassifierConfig(BaseModel):
    """Small conv classifier used for detection features and proxy scores."""
    model_config = ConfigDict(extra="forbid")

    channels: int = Field(default=1, ge=1)
    height: int = Field(default=28, ge=1)
    width: int = Field(default=28, ge=1)
    classes: int = Field(default=10, ge=2)
    conv_channels: list[int] = Field(default_factory=lambda: [8, 16])
    feature_width: int = Field(default=64, ge=1, description="Penultimate feature dimensionality")
    seed: int = Field(default=0)

    @field_validator("conv_channels", mode="before")
    @classmethod
    def split_strings(cls, v):
        return split_list(v)


class GeneratorConfig(BaseModel):
    """Conv encoder-decoder translating between image domains."""
    model_config = ConfigDict(extra="forbid")

    in_channels: int = Field(default=3, ge=1)
    out_channels: int = Field(default=1, ge=1)
    hidden_channels: int = Field(default=16, ge=1)
    kernel: int = Field(default=3, ge=1)
    seed: int = Field(default=0)
    lo: float = Field(default=-1.0, description="Lower end of the output range")
    hi: float = Field(default=1.0, description="Upper end of the output range")

    @field_validator("kernel")
    @classmethod
    def check_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {v}")
        return v


class ArCycleConfig(BaseModel):
    """ARCycle objective, ablation and loop settings."""
    model_config = ConfigDict(extra="forbid")

    beta: Optional[float] = Field(default=None, ge=0, description="Cycle weight; auto-scaled at step 0 when unset")
    ablation: Ablation = Field(default=Ablation.FULL)
    blur_sigma: float = Field(default=1.0, description="Blur width for the blur ablation")
    blur_truncate: float = Field(default=3.0, gt=0, description="Kernel radius in units of sigma")
    snapshot_every: int = Field(default=25, ge=1)
    snapshot_count: int = Field(default=4, ge=1, description="Examples per triptych")
    pretrain_steps: int = Field(default=0, ge=0, description="Paired supervised steps before ARCycle")
    iterations: int = Field(default=100, ge=0)
    batch_size: int = Field(default=8, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    seed: int = Field(default=0)

    @model_validator(mode="after")
    def check_blur(self) -> "ArCycleConfig":
        if self.ablation == Ablation.BLUR and not self.blur_sigma > 0:
            raise ValueError("blur_sigma must be positive for the blur ablation")
        return self

    def optimizer(self) -> OptConfig:
        return OptConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_steps=self.iterations,
            seed=self.seed,
        )


class GridSpec(BaseModel):
    """Rectangular evaluation grid over (x1, x2)."""
    model_config = ConfigDict(extra="forbid")

    x1_range: tuple[float, float] = Field(default=(-3.0, 3.0))
    x2_range: tuple[float, float] = Field(default=(-3.0, 3.0))
    nx: int = Field(default=100, description="Columns (x1 resolution)")
    ny: int = Field(default=100, description="Rows (x2 resolution)")

    @field_validator("x1_range", "x2_range", mode="before")
    @classmethod
    def split_strings(cls, v):
        return split_list(v)

    @field_validator("nx", "ny")
    @classmethod
    def check_resolution(cls, v: int) -> int:
        if v < 2:
            raise ValueError(f"grid resolution must be at least 2 per axis, got {v}")
        return v

    @field_validator("x1_range", "x2_range")
    @classmethod
    def check_range(cls, v: tuple[float, float]) -> tuple[float, float]:
        if not v[1] > v[0]:
            raise ValueError(f"range {v} must be increasing")
        return v

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linspace(*self.x1_range, self.nx), np.linspace(*self.x2_range, self.ny)

    def points(self) -> np.ndarray:
        """(ny * nx, 2) points, row-major with rows along x2."""
        x1, x2 = self.axes()
        grid_x1, grid_x2 = np.meshgrid(x1, x2)
        return np.stack([grid_x1.ravel(), grid_x2.ravel()], axis=1)
