"""Dataset container shared by every experiment."""

from __future__ import annotations

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from arbench.models.bins import BinSpec


class Dataset(BaseModel):
    """Examples on a bin grid, with optional aligned labels."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str = Field(..., description="Short identifier used in reports")
    examples: np.ndarray = Field(..., description="Float64 array, first axis indexes examples")
    labels: Optional[np.ndarray] = Field(default=None, description="Integer label per example")
    bins: BinSpec = Field(..., description="Grid the values live on")
    provenance: str = Field(default="", description="Where the data came from")

    @model_validator(mode="after")
    def check_contents(self) -> "Dataset":
        self.examples = np.asarray(self.examples, dtype=np.float64)
        if self.examples.ndim < 2:
            raise ValueError(f"examples need a leading batch axis, got shape {self.examples.shape}")
        if not self.bins.covers(self.examples):
            raise ValueError(f"{self.name}: example values fall outside the bin coverage")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.examples),):
                raise ValueError(
                    f"{self.name}: {len(self.labels)} labels for {len(self.examples)} examples"
                )
        return self

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def event_shape(self) -> tuple[int, ...]:
        return self.examples.shape[1:]

    def subset(self, indices, name: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(
            name=name or self.name,
            examples=self.examples[indices],
            labels=None if self.labels is None else self.labels[indices],
            bins=self.bins,
            provenance=self.provenance,
        )

    def classes(self) -> list[int]:
        if self.labels is None:
            return []
        return sorted(int(c) for c in np.unique(self.labels))
