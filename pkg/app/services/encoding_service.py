# app/services/encoding_service.py
"""Per-episode feature projections into the shared d_data space."""
from typing import Iterable, Sequence

import numpy as np

from app.core.errors import DimTooLarge
from app.models.config import ProjectionKind
from app.models.episode import ExtendedPermutation, FeatureProjection, GaussianProjection
from app.utiles.custom_helpers import partial_fisher_yates
from app.utiles.logger import get_logger

logger = get_logger(__name__)


def _check_dims(d_t: int, d_data: int) -> None:
    if d_t < 1 or d_t > d_data:
        logger.error("DimTooLarge: d_T=%s does not fit d_data=%s", d_t, d_data)
        raise DimTooLarge(f"d_T={d_t} does not fit d_data={d_data}")


def sample_extended_permutation(d_t: int, d_data: int, rng: np.random.Generator) -> ExtendedPermutation:
    """Uniform over all d_data!/(d_data-d_T)! injections [d_T] -> [d_data]."""
    _check_dims(d_t, d_data)
    return ExtendedPermutation(source_dim=d_t, target_dim=d_data, index_map=partial_fisher_yates(d_t, d_data, rng))


def identity_projection(d_t: int, d_data: int) -> ExtendedPermutation:
    """Fixed identity-prefix map used by the no-projection ablation."""
    _check_dims(d_t, d_data)
    return ExtendedPermutation(source_dim=d_t, target_dim=d_data, index_map=np.arange(d_t))


def sample_gaussian_projection(d_t: int, d_data: int, rng: np.random.Generator) -> GaussianProjection:
    _check_dims(d_t, d_data)
    matrix = rng.standard_normal((d_data, d_t)) / np.sqrt(d_t)
    matrix.setflags(write=False)
    return GaussianProjection(source_dim=d_t, target_dim=d_data, matrix=matrix)


def sample_projection(kind: ProjectionKind, d_t: int, d_data: int, rng: np.random.Generator) -> FeatureProjection:
    if kind == "permutation":
        return sample_extended_permutation(d_t, d_data, rng)
    if kind == "gaussian":
        return sample_gaussian_projection(d_t, d_data, rng)
    return identity_projection(d_t, d_data)


def apply_projection(pi: FeatureProjection, x: np.ndarray) -> np.ndarray:
    """Project one vector or a batch of rows; raises LengthMismatch on the wrong width."""
    return pi.apply(x)


# --------------------------
# Coverage statistics
# --------------------------
def coordinate_coverage_counts(maps: Iterable[ExtendedPermutation], d_data: int) -> np.ndarray:
    """N_j = number of maps whose image contains coordinate j."""
    counts = np.zeros(d_data, dtype=np.int64)
    for pi in maps:
        if pi.target_dim != d_data:
            raise ValueError(f"map targets d_data={pi.target_dim}, expected {d_data}")
        counts[pi.index_map] += 1
    return counts


def chernoff_lower_tail(t: int, p: float, delta: float) -> float:
    """Upper bound on Pr[N <= (1 - delta) t p] for N ~ Binomial(t, p)."""
    return float(np.exp(-(delta ** 2) * t * p / 2.0))


def coverage_within(counts: Sequence[int], t: int, p: float, width: float = 4.0) -> bool:
    """Every count lies within width * sqrt(t p (1 - p)) of its mean t p."""
    counts = np.asarray(counts, dtype=np.float64)
    return bool(np.all(np.abs(counts - t * p) <= width * np.sqrt(t * p * (1.0 - p))))
