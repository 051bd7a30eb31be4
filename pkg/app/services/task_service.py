# app/services/task_service.py
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy.stats import norm

from app.core.errors import (
    DimTooLarge, InsufficientSamples, InvalidConfig, NotSynthetic, UnknownLabel,
)
from app.models.config import FeatureFileConfig, TaskGridConfig
from app.models.task import FeatureStore, MetaDataset, SyntheticGaussianMixture, Task
from app.models.report import BayesRisk
from app.utiles.custom_helpers import derive_rng
from app.utiles.logger import get_logger

logger = get_logger(__name__)


# --------------------------
# Helper functions
# --------------------------
def _label_position(task: Task, label: str) -> int:
    try:
        return task.labels.index(label)
    except ValueError:
        logger.error("UnknownLabel: %r is not a label of task %s", label, task.name)
        raise UnknownLabel(f"label {label!r} is not a label of task {task.name}") from None


def _require_synthetic(task: Task) -> SyntheticGaussianMixture:
    if not task.is_synthetic:
        logger.error("NotSynthetic: task %s is file-backed", task.name)
        raise NotSynthetic(f"task {task.name} is file-backed; Bayes risk needs a synthetic source")
    return task.source


# --------------------------
# Sampling
# --------------------------
def sample_labelled(
    task: Task,
    label: str,
    count: int,
    rng: np.random.Generator,
    exclude: Optional[Iterable[int]] = None,
) -> Tuple[np.ndarray, List[str], Optional[np.ndarray]]:
    """
    Draw `count` samples of class `label`.

    Returns (features (count, d_T), labels, row ids). Row ids are None for
    synthetic tasks. `exclude` lists store rows already drawn this episode.
    """
    position = _label_position(task, label)
    if count < 0:
        raise ValueError("count must be >= 0")

    if task.is_synthetic:
        source: SyntheticGaussianMixture = task.source
        noise = rng.standard_normal((count, task.feature_dim))
        x = source.means[position] + source.sigma * noise
        return x, [label] * count, None

    store: FeatureStore = task.source
    rows = store.index[label]
    if exclude is not None:
        taken = np.fromiter(exclude, dtype=np.int64)
        rows = rows[~np.isin(rows, taken)]
    if count > rows.size:
        logger.error("InsufficientSamples: label %r of %s has %s rows left, %s requested", label, task.name, rows.size, count)
        raise InsufficientSamples(f"label {label!r} of task {task.name} has {rows.size} rows left, {count} requested")
    picked = rows[rng.permutation(rows.size)[:count]]
    return np.array(store.features[picked], dtype=np.float64), [label] * count, picked


# --------------------------
# Bayes risk
# --------------------------
def nearest_mean(x: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Bayes classifier for isotropic equal-variance Gaussians: argmin_y ||x - mu_y|| (ties to the first)."""
    d2 = (x * x).sum(axis=1, keepdims=True) - 2.0 * x @ means.T + (means * means).sum(axis=1)[None, :]
    return np.argmin(d2, axis=1)


def bayes_risk(task: Task, samples: int = 200_000, seed: int = 0, chunk: int = 50_000) -> BayesRisk:
    """Monte-Carlo 0-1 Bayes risk under equal priors, with its standard error."""
    source = _require_synthetic(task)
    rng = derive_rng(seed, f"bayes/{task.name}")
    k = task.way
    if source.sigma == 0.0:
        # every draw sits on its mean; identical means still collide
        predicted = nearest_mean(source.means, source.means)
        risk = float(np.mean(predicted != np.arange(k)))
        return BayesRisk(risk=risk, std_error=0.0, samples=k)

    errors = 0
    drawn = 0
    while drawn < samples:
        m = min(chunk, samples - drawn)
        y = rng.integers(0, k, size=m)
        x = source.means[y] + source.sigma * rng.standard_normal((m, task.feature_dim))
        errors += int(np.count_nonzero(nearest_mean(x, source.means) != y))
        drawn += m
    p = errors / samples
    se = float(np.sqrt(p * (1.0 - p) / samples))
    logger.debug("bayes_risk(%s) = %.5f +- %.5f", task.name, p, se)
    return BayesRisk(risk=p, std_error=se, samples=samples)


def bayes_risk_closed_form(task: Task) -> float:
    """Exact two-class risk Phi(-||mu_1 - mu_2|| / 2 sigma)."""
    source = _require_synthetic(task)
    if task.way != 2:
        raise InvalidConfig("closed-form Bayes risk is only defined for two classes")
    gap = float(np.linalg.norm(source.means[0] - source.means[1]))
    if gap == 0.0:
        return 0.5
    if source.sigma == 0.0:
        return 0.0
    return float(norm.cdf(-gap / (2.0 * source.sigma)))


# --------------------------
# Task construction
# --------------------------
def synthetic_task(name: str, means: np.ndarray, sigma: float = 1.0, labels: Optional[List[str]] = None, seed: int = 0) -> Task:
    means = np.asarray(means, dtype=np.float64)
    labels = labels or [f"{name}/c{i}" for i in range(means.shape[0])]
    return Task(
        name=name,
        feature_dim=means.shape[1],
        labels=tuple(labels),
        source=SyntheticGaussianMixture(means=means, sigma=sigma, seed=seed),
    )


def make_task_grid(config: TaskGridConfig) -> MetaDataset:
    """Deterministic family of synthetic Gaussian-mixture tasks, weighted by |Y_T|."""
    (d_lo, d_hi), (k_lo, k_hi) = config.dim_range, config.classes_range
    if k_lo < 2:
        logger.error("InvalidConfig: classes_range must start at 2 or more, got %s", config.classes_range)
        raise InvalidConfig(f"classes_range must start at 2 or more, got {config.classes_range}")

    tasks = []
    for i in range(config.n_tasks):
        rng = derive_rng(config.seed, f"grid/{config.split}", i)
        d = int(rng.integers(d_lo, d_hi + 1))
        k = int(rng.integers(k_lo, k_hi + 1))
        # mean coordinates ~ N(0, separation^2 / d): pairwise gaps concentrate near separation*sqrt(2)
        means = rng.standard_normal((k, d)) * (config.separation / np.sqrt(d))
        tasks.append(synthetic_task(f"{config.split}-{i:04d}", means, sigma=config.sigma, seed=config.seed))
    logger.info("Built %s synthetic %s tasks (seed=%s)", len(tasks), config.split, config.seed)
    return MetaDataset.weighted_by_classes(tasks, split=config.split)


def task_from_store(store: FeatureStore, config: FeatureFileConfig) -> Task:
    labels = tuple(config.labels) if config.labels else store.label_names
    missing = [label for label in labels if label not in store.index]
    if missing:
        logger.error("UnknownLabel: %s not present in %s", missing, store.path)
        raise UnknownLabel(f"labels {missing} are not present in {store.path}")
    return Task(name=config.name or store.path, feature_dim=store.dim, labels=labels, source=store)


def check_compatible(meta: MetaDataset, d_data: int) -> None:
    """Reject tasks that cannot be embedded into the shared feature space."""
    for task in meta.tasks:
        if task.feature_dim > d_data:
            logger.error("DimTooLarge: task %s has d_T=%s > d_data=%s", task.name, task.feature_dim, d_data)
            raise DimTooLarge(f"task {task.name} has d_T={task.feature_dim} > d_data={d_data}")
