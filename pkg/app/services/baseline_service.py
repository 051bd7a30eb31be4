# app/services/baseline_service.py
"""
Algorithm-explicit comparators on raw d_T features (no pi, no rho).

Label order for tie-breaks is the episode's label tuple.
"""
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax

from app.core.errors import InvalidConfig
from app.models.config import ProbeConfig
from app.models.episode import Episode
from app.models.task import Task
from app.services.task_service import nearest_mean
from app.utiles.logger import get_logger

logger = get_logger(__name__)

Algorithm = Callable[[Episode], List[str]]


# --------------------------
# ProtoHead
# --------------------------
def prototypes(episode: Episode) -> np.ndarray:
    """(K, d_T) exact mean of each label's support rows, in episode label order."""
    y = np.asarray(episode.support_y)
    return np.stack([episode.support_x[y == label].mean(axis=0) for label in episode.labels])


def protohead_predict(episode: Episode) -> List[str]:
    """Nearest prototype under squared Euclidean distance; ties to the earliest label."""
    d2 = cdist(episode.query_x, prototypes(episode), metric="sqeuclidean")
    return [episode.labels[j] for j in np.argmin(d2, axis=1)]


# --------------------------
# Linear probe
# --------------------------
def _normalise(support: np.ndarray, query: np.ndarray):
    centre = support.mean(axis=0)
    s, q = support - centre, query - centre
    scale = float(np.sqrt(np.mean(np.sum(s * s, axis=1))))
    if scale == 0.0:
        scale = 1.0
    return s / scale, q / scale


def fit_linear_probe(x: np.ndarray, targets: np.ndarray, k: int, config: ProbeConfig):
    """Multinomial logistic regression, zero init, full-batch gradient descent."""
    n, d = x.shape
    w = np.zeros((d, k))
    b = np.zeros(k)
    onehot = np.eye(k)[targets]
    for _ in range(config.steps):
        residual = (softmax(x @ w + b, axis=1) - onehot) / n
        w -= config.lr * (x.T @ residual + config.weight_decay * w)
        b -= config.lr * residual.sum(axis=0)
    return w, b


def linear_probe_fit_predict(episode: Episode, config: Optional[ProbeConfig] = None) -> List[str]:
    config = config or ProbeConfig()
    if config.steps < 0:
        logger.error("InvalidConfig: probe steps must be >= 0, got %s", config.steps)
        raise InvalidConfig(f"probe steps must be >= 0, got {config.steps}")
    position: Dict[str, int] = {label: i for i, label in enumerate(episode.labels)}
    targets = np.array([position[y] for y in episode.support_y], dtype=np.int64)
    s, q = _normalise(np.asarray(episode.support_x, dtype=np.float64), np.asarray(episode.query_x, dtype=np.float64))
    w, b = fit_linear_probe(s, targets, episode.way, config)
    return [episode.labels[j] for j in np.argmax(q @ w + b, axis=1)]


# --------------------------
# Reference predictors
# --------------------------
def bayes_oracle(task: Task) -> Algorithm:
    """Predicts argmin_y ||x - mu_y|| over the episode's labels using the task's true means."""
    means = task.source.means
    rows = {label: i for i, label in enumerate(task.labels)}

    def predict(episode: Episode) -> List[str]:
        local = means[[rows[label] for label in episode.labels]]
        return [episode.labels[j] for j in nearest_mean(np.asarray(episode.query_x, dtype=np.float64), local)]

    return predict


def constant_predictor(episode: Episode) -> List[str]:
    return [episode.labels[0]] * episode.n_query
