# app/models/episode.py
"""
Episode-level schemas: feature projections (pi), label injections (rho), the
sampled episode and the token sequence fed to the transformer.
"""
from typing import Dict, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.errors import LengthMismatch, UnmappedLabel
from app.nn.tensor import Tensor
from app.utiles.logger import get_logger

logger = get_logger(__name__)

_FROZEN = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def _check_width(x: np.ndarray, width: int) -> None:
    if x.shape[-1] != width:
        logger.error("feature length %s does not match projection source dim %s", x.shape[-1], width)
        raise LengthMismatch(f"feature length {x.shape[-1]} does not match projection source dim {width}")


# -----------------------------
# Feature projections
# -----------------------------
class ExtendedPermutation(BaseModel):
    """Injective coordinate map [d_T] -> [d_data]; coordinate i of x lands on index_map[i]."""
    model_config = _FROZEN

    source_dim: int = Field(..., ge=1)
    target_dim: int = Field(..., ge=1)
    index_map: np.ndarray

    @model_validator(mode="after")
    def injective(self):
        idx = np.asarray(self.index_map, dtype=np.int64)
        if self.source_dim > self.target_dim:
            raise ValueError(f"d_T={self.source_dim} exceeds d_data={self.target_dim}")
        if idx.shape != (self.source_dim,):
            raise ValueError("index_map needs exactly one entry per source coordinate")
        if idx.size and (idx.min() < 0 or idx.max() >= self.target_dim):
            raise ValueError("index_map entries must lie in [0, d_data)")
        if np.unique(idx).size != idx.size:
            raise ValueError("index_map entries must be pairwise distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "index_map", idx)
        return self

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        _check_width(x, self.source_dim)
        out = np.zeros(x.shape[:-1] + (self.target_dim,), dtype=np.result_type(x.dtype, np.float32))
        out[..., self.index_map] = x
        return out

    def matrix(self) -> np.ndarray:
        """Binary (d_data, d_T) matrix with exactly one 1 per column, at most one per row."""
        mat = np.zeros((self.target_dim, self.source_dim), dtype=np.int8)
        mat[self.index_map, np.arange(self.source_dim)] = 1
        return mat

    def reindexed(self, perm: np.ndarray) -> "ExtendedPermutation":
        """The map pi' with pi'(x[perm]) == pi(x) for all x."""
        return ExtendedPermutation(source_dim=self.source_dim, target_dim=self.target_dim,
                                   index_map=self.index_map[np.asarray(perm)])


class GaussianProjection(BaseModel):
    """Frozen dense projection with i.i.d. N(0, 1/d_T) entries."""
    model_config = _FROZEN

    source_dim: int = Field(..., ge=1)
    target_dim: int = Field(..., ge=1)
    matrix_: np.ndarray = Field(..., alias="matrix")

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        _check_width(x, self.source_dim)
        return x @ self.matrix_.T


FeatureProjection = Union[ExtendedPermutation, GaussianProjection]


# -----------------------------
# Label injection
# -----------------------------
class LabelInjection(BaseModel):
    """rho: the episode's labels -> distinct dictionary indices in [0, active_count)."""
    model_config = _FROZEN

    labels: Tuple[str, ...]
    indices: Tuple[int, ...]
    active_count: int = Field(..., ge=1)

    @model_validator(mode="after")
    def injective(self):
        if len(self.labels) != len(self.indices):
            raise ValueError("one index per label is required")
        if len(set(self.indices)) != len(self.indices) or len(set(self.labels)) != len(self.labels):
            raise ValueError("label injection must be one-to-one")
        if any(i < 0 or i >= self.active_count for i in self.indices):
            raise ValueError(f"indices must lie in [0, {self.active_count})")
        return self

    @property
    def forward_map(self) -> Dict[str, int]:
        return dict(zip(self.labels, self.indices))

    @property
    def inverse_map(self) -> Dict[int, str]:
        return dict(zip(self.indices, self.labels))

    def index_of(self, label: str) -> int:
        try:
            return self.forward_map[label]
        except KeyError:
            logger.error("label %r is not in the injection's domain", label)
            raise UnmappedLabel(f"label {label!r} is not in the injection's domain") from None

    def label_of(self, index: int) -> str:
        try:
            return self.inverse_map[int(index)]
        except KeyError:
            raise UnmappedLabel(f"index {index} is not in the injection's image") from None

    def image(self) -> np.ndarray:
        """rho(Y) in increasing index order."""
        return np.sort(np.asarray(self.indices, dtype=np.int64))

    def active_mask(self, size: int) -> np.ndarray:
        mask = np.zeros(size, dtype=bool)
        mask[list(self.indices)] = True
        return mask


# -----------------------------
# Episode
# -----------------------------
class Episode(BaseModel):
    """An N-shot instance (S, Q) of one task with its projection pi and injection rho."""
    model_config = _FROZEN

    task_name: str
    labels: Tuple[str, ...] = Field(..., description="The episode's K labels (subset of Y_T)")
    shots: int = Field(..., ge=1)
    queries_per_class: int = Field(..., ge=1)
    support_x: np.ndarray
    support_y: Tuple[str, ...]
    query_x: np.ndarray
    query_y: Tuple[str, ...]
    support_rows: Optional[np.ndarray] = None
    query_rows: Optional[np.ndarray] = None
    pi: FeatureProjection
    rho: LabelInjection
    episode_seed: Optional[int] = None

    @model_validator(mode="after")
    def sizes(self):
        k = len(self.labels)
        if self.support_x.shape[0] != len(self.support_y) or self.query_x.shape[0] != len(self.query_y):
            raise ValueError("one label per support/query row is required")
        if set(self.rho.labels) != set(self.labels):
            raise ValueError("rho must be defined on exactly the episode's labels")
        if len(self.support_y) != self.shots * k or len(self.query_y) != self.queries_per_class * k:
            raise ValueError(f"expected |S|={self.shots * k} and |Q|={self.queries_per_class * k}")
        return self

    @property
    def way(self) -> int:
        return len(self.labels)

    @property
    def n(self) -> int:
        return len(self.support_y)

    @property
    def n_query(self) -> int:
        return len(self.query_y)


class TokenSequence(BaseModel):
    """Z = (z_1..z_n, z'_1..z'_q): support rows first, then query rows carrying the marker c."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tokens: Tensor
    is_query: np.ndarray
    n_support: int

    @property
    def n_query(self) -> int:
        return int(self.is_query.sum())
