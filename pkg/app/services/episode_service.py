# app/services/episode_service.py
"""
N-shot episode construction and the episode loss.

Draw order for one episode (all from the single `rng` passed in):
task (weight ~ |Y_T|), K, N, the K labels, per-label support/query samples,
row shuffles, then pi, then rho.
"""
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.core.errors import EmptyMetaDataset, LengthMismatch, TaskTooSmall, TooManyLabels
from app.models.config import ProjectionKind
from app.models.episode import Episode, ExtendedPermutation, LabelInjection
from app.models.task import MetaDataset, Task
from app.nn.tensor import Tensor, masked_cross_entropy, reduce_mean, reduce_sum
from app.services.encoding_service import sample_projection
from app.services.label_service import sample_injection
from app.services.task_service import sample_labelled
from app.utiles.custom_helpers import partial_fisher_yates, uniform_choice
from app.utiles.logger import get_logger

logger = get_logger(__name__)


# --------------------------
# Helper functions
# --------------------------
def _allowed_ways(task: Task, way_values: Sequence[int], active_count: int) -> List[int]:
    """
    K values this task can serve: at most |Y_T| and at most active_count.

    K is then drawn uniformly from this subset, so a 2-label task always yields
    K=2 when way_values is {2..5}. Only an empty subset raises.
    """
    allowed = [k for k in way_values if k <= task.way and k <= active_count]
    if allowed:
        return allowed
    if any(k <= task.way for k in way_values):
        logger.error("TooManyLabels: every K in %s exceeds active_count=%s", list(way_values), active_count)
        raise TooManyLabels(f"every K in {list(way_values)} exceeds active_count={active_count}")
    logger.error("TaskTooSmall: task %s has %s labels, K values %s", task.name, task.way, list(way_values))
    raise TaskTooSmall(f"task {task.name} has {task.way} labels; cannot draw K from {list(way_values)}")


def _check_store_rows(task: Task, labels: Sequence[str], needed: int) -> None:
    if task.is_synthetic:
        return
    for label in labels:
        available = task.source.index[label].size
        if available < needed:
            logger.error("TaskTooSmall: label %r of %s has %s rows, %s needed", label, task.name, available, needed)
            raise TaskTooSmall(f"label {label!r} of task {task.name} has {available} rows, needs {needed}")


# --------------------------
# Sampling
# --------------------------
def episode_for_task(
    task: Task,
    k: int,
    n_shot: int,
    n_query: int,
    rng: np.random.Generator,
    d_data: int,
    active_count: int,
    projection: ProjectionKind = "permutation",
    episode_seed: Optional[int] = None,
) -> Episode:
    """One class-balanced (S, Q) instance with K labels drawn uniformly from the task."""
    if k > task.way:
        logger.error("TaskTooSmall: K=%s exceeds |Y|=%s for %s", k, task.way, task.name)
        raise TaskTooSmall(f"K={k} exceeds the {task.way} labels of task {task.name}")
    labels = tuple(task.labels[i] for i in partial_fisher_yates(k, task.way, rng))
    _check_store_rows(task, labels, n_shot + n_query)

    sx, sy, sr, qx, qy, qr = [], [], [], [], [], []
    for label in labels:
        x, y, rows = sample_labelled(task, label, n_shot + n_query, rng)
        sx.append(x[:n_shot]); sy.extend(y[:n_shot])
        qx.append(x[n_shot:]); qy.extend(y[n_shot:])
        if rows is not None:
            sr.append(rows[:n_shot]); qr.append(rows[n_shot:])

    s_order = rng.permutation(n_shot * k)
    q_order = rng.permutation(n_query * k)
    pi = sample_projection(projection, task.feature_dim, d_data, rng)
    rho = sample_injection(labels, active_count, rng)

    return Episode(
        task_name=task.name,
        labels=labels,
        shots=n_shot,
        queries_per_class=n_query,
        support_x=np.concatenate(sx)[s_order],
        support_y=tuple(sy[i] for i in s_order),
        query_x=np.concatenate(qx)[q_order],
        query_y=tuple(qy[i] for i in q_order),
        support_rows=np.concatenate(sr)[s_order] if sr else None,
        query_rows=np.concatenate(qr)[q_order] if qr else None,
        pi=pi,
        rho=rho,
        episode_seed=episode_seed,
    )


def sample_task(meta: MetaDataset, rng: np.random.Generator) -> Task:
    if not meta.tasks:
        logger.error("EmptyMetaDataset: no tasks in %s split", meta.split)
        raise EmptyMetaDataset(f"meta-dataset ({meta.split}) has no tasks")
    return meta.tasks[int(rng.choice(len(meta.tasks), p=meta.probabilities))]


def sample_episode(
    meta: MetaDataset,
    shot_values: Sequence[int],
    way_values: Sequence[int],
    n_query: int,
    rng: np.random.Generator,
    d_data: int,
    active_count: int,
    projection: ProjectionKind = "permutation",
    episode_seed: Optional[int] = None,
) -> Episode:
    """Task by weight, then K and N uniformly from the allowed values, then the instance."""
    if not shot_values or not way_values:
        raise ValueError("shot and way value sets must be nonempty")
    task = sample_task(meta, rng)
    k = uniform_choice(_allowed_ways(task, way_values, active_count), rng)
    n_shot = uniform_choice(list(shot_values), rng)
    return episode_for_task(task, k, n_shot, n_query, rng, d_data, active_count, projection, episode_seed)


# --------------------------
# Loss
# --------------------------
def episode_targets(episode: Episode) -> np.ndarray:
    return np.fromiter((episode.rho.index_of(y) for y in episode.query_y), dtype=np.int64, count=episode.n_query)


def episode_loss(scores: Tensor, episode: Episode, reduction: str = "mean") -> Tensor:
    """Mean (or sum) over Q of the cross-entropy restricted to rho(Y), against rho(y)."""
    if scores.ndim != 2 or scores.shape[0] != episode.n_query:
        logger.error("LengthMismatch: %s score rows for %s queries", scores.shape[0] if scores.ndim else 0, episode.n_query)
        raise LengthMismatch(f"expected one score row per query ({episode.n_query}), got shape {scores.shape}")
    per_query = masked_cross_entropy(scores, episode_targets(episode), episode.rho.active_mask(scores.shape[1]))
    return reduce_sum(per_query) if reduction == "sum" else reduce_mean(per_query)


# --------------------------
# Paired transforms (property checks)
# --------------------------
def permute_support(episode: Episode, order: np.ndarray) -> Episode:
    order = np.asarray(order)
    return episode.model_copy(update={
        "support_x": episode.support_x[order],
        "support_y": tuple(episode.support_y[i] for i in order),
        "support_rows": None if episode.support_rows is None else episode.support_rows[order],
    })


def relabel(episode: Episode, sigma: Dict[str, str]) -> Episode:
    """Labels y -> sigma(y) with rho' = rho o sigma^-1, so sigma(y) keeps y's dictionary index."""
    rho = episode.rho
    new_rho = LabelInjection(
        labels=tuple(sigma[label] for label in rho.labels),
        indices=rho.indices,
        active_count=rho.active_count,
    )
    return episode.model_copy(update={
        "labels": tuple(sigma[label] for label in episode.labels),
        "support_y": tuple(sigma[y] for y in episode.support_y),
        "query_y": tuple(sigma[y] for y in episode.query_y),
        "rho": new_rho,
    })


def permute_features(episode: Episode, perm: np.ndarray) -> Episode:
    """Coordinates x -> x[perm] with pi' = pi o sigma^-1, so every projected vector is unchanged."""
    if not isinstance(episode.pi, ExtendedPermutation):
        raise ValueError("feature permutation pairing needs an extended-permutation projection")
    perm = np.asarray(perm)
    return episode.model_copy(update={
        "support_x": episode.support_x[:, perm],
        "query_x": episode.query_x[:, perm],
        "pi": episode.pi.reindexed(perm),
    })
