# app/models/task.py
"""
Task schemas: T = (X, Y, p, loss) with a synthetic Gaussian-mixture source or a
file-backed feature store, and the weighted meta-dataset built from them.
"""
from typing import Dict, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.utiles.logger import get_logger

logger = get_logger(__name__)


def _frozen_array(arr: np.ndarray, dtype) -> np.ndarray:
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class SyntheticGaussianMixture(BaseModel):
    """Isotropic class conditionals N(mu_y, sigma^2 I) with equal class priors."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    means: np.ndarray = Field(..., description="(|Y|, d_T) class means, row order = task label order")
    sigma: float = Field(..., ge=0.0, description="Shared std; 0 is the degenerate limit")
    seed: int = 0

    @field_validator("means", mode="before")
    def as_matrix(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("means must be a (classes, dim) matrix")
        return _frozen_array(arr, np.float64)


class FeatureStore(BaseModel):
    """Pre-encoded feature rows with a label per row."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    path: str
    features: np.ndarray = Field(..., description="(rows, d_T) float32")
    row_labels: np.ndarray = Field(..., description="(rows,) index into label_names")
    label_names: Tuple[str, ...]
    index: Dict[str, np.ndarray] = Field(default_factory=dict, description="label -> row ids")

    @model_validator(mode="after")
    def build_index(self):
        if self.features.ndim != 2 or self.row_labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (rows, d) with one label per row")
        object.__setattr__(self, "features", _frozen_array(self.features, np.float32))
        object.__setattr__(self, "row_labels", _frozen_array(self.row_labels, np.int64))
        index = {
            name: _frozen_array(np.flatnonzero(self.row_labels == i), np.int64)
            for i, name in enumerate(self.label_names)
        }
        object.__setattr__(self, "index", index)
        return self

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])


class Task(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str
    feature_dim: int = Field(..., gt=0)
    labels: Tuple[str, ...]
    source: Union[SyntheticGaussianMixture, FeatureStore]
    loss_id: Literal["zero_one"] = "zero_one"

    @model_validator(mode="after")
    def consistent_source(self):
        if len(self.labels) < 2:
            raise ValueError(f"task {self.name} needs at least 2 labels")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"task {self.name} has duplicate labels")
        if isinstance(self.source, SyntheticGaussianMixture):
            if self.source.means.shape != (len(self.labels), self.feature_dim):
                raise ValueError(f"task {self.name}: means shape {self.source.means.shape} does not match labels/dim")
        else:
            if self.source.dim != self.feature_dim:
                raise ValueError(f"task {self.name}: store rows have length {self.source.dim}, expected {self.feature_dim}")
            for label in self.labels:
                if label not in self.source.index or self.source.index[label].size == 0:
                    raise ValueError(f"task {self.name}: label {label!r} has no rows in {self.source.path}")
        return self

    @property
    def is_synthetic(self) -> bool:
        return isinstance(self.source, SyntheticGaussianMixture)

    @property
    def way(self) -> int:
        return len(self.labels)


class MetaDataset(BaseModel):
    """Empirical task distribution; sampling probability proportional to weight (= |Y_T| by default)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tasks: Tuple[Task, ...]
    weights: Tuple[float, ...]
    split: Literal["train", "val", "test"] = "train"

    @model_validator(mode="after")
    def weights_match(self):
        if len(self.weights) != len(self.tasks):
            raise ValueError("one weight per task is required")
        if any(w <= 0 for w in self.weights):
            raise ValueError("task weights must be positive")
        return self

    @classmethod
    def weighted_by_classes(cls, tasks, split: str = "train") -> "MetaDataset":
        tasks = tuple(tasks)
        return cls(tasks=tasks, weights=tuple(float(t.way) for t in tasks), split=split)

    @property
    def probabilities(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum()
