# app/services/label_service.py
"""Random-injection label embeddings: rho sampling, lookup, restricted argmax, dictionary growth."""
from typing import List, Sequence

import numpy as np

from app.core.errors import InvalidSchedule, TooManyLabels
from app.models.config import ScheduleConfig
from app.models.episode import LabelInjection
from app.models.state import EmbeddingDictionary
from app.nn.tensor import Tensor, take
from app.utiles.custom_helpers import partial_fisher_yates
from app.utiles.logger import get_logger

logger = get_logger(__name__)


def sample_injection(labels: Sequence[str], active_count: int, rng: np.random.Generator) -> LabelInjection:
    """Uniform over the active_count!/(active_count-K)! injections of the K labels into [0, active_count)."""
    k = len(labels)
    if k > active_count:
        logger.error("TooManyLabels: K=%s exceeds active_count=%s", k, active_count)
        raise TooManyLabels(f"K={k} exceeds active_count={active_count}")
    indices = partial_fisher_yates(k, active_count, rng)
    return LabelInjection(labels=tuple(labels), indices=tuple(int(i) for i in indices), active_count=active_count)


def embed_labels(dictionary: EmbeddingDictionary, rho: LabelInjection, labels: Sequence[str]) -> Tensor:
    """Rows E[rho(y)]; gradients reach the selected rows only."""
    index = np.fromiter((rho.index_of(label) for label in labels), dtype=np.int64, count=len(labels))
    return take(dictionary.embeddings, index)


def query_markers(dictionary: EmbeddingDictionary, count: int) -> Tensor:
    """`count` copies of c as (count, d_label); gradient sums over the copies."""
    marker = dictionary.marker.reshape(1, dictionary.d_label)
    return take(marker, np.zeros(count, dtype=np.int64))


def classify_rows(scores: np.ndarray, rho: LabelInjection) -> List[str]:
    """Restricted argmax over rho(Y) per row; ties go to the smallest index."""
    scores = np.atleast_2d(np.asarray(scores))
    image = rho.image()
    # image is increasing, so argmax's first-hit rule is the smallest-index tie-break
    best = image[np.argmax(scores[:, image], axis=1)]
    return [rho.label_of(j) for j in best]


def classify(scores, rho: LabelInjection) -> str:
    data = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    return classify_rows(data.reshape(1, -1), rho)[0]


def active_count_at(episode_index: int, M: int, schedule: ScheduleConfig) -> int:
    """min(M, M0 + floor((M - M0) * t / W)); M when no schedule is configured."""
    if schedule.start is None:
        return M
    m0, w = schedule.start, schedule.warmup
    if m0 > M or w <= 0:
        logger.error("InvalidSchedule: start=%s, M=%s, warmup=%s", m0, M, w)
        raise InvalidSchedule(f"schedule needs start <= M and warmup > 0 (start={m0}, M={M}, warmup={w})")
    return min(M, m0 + ((M - m0) * int(episode_index)) // w)


def advance_schedule(dictionary: EmbeddingDictionary, episode_index: int, schedule: ScheduleConfig) -> int:
    """Move active_count to the schedule value for `episode_index`; never decreases."""
    target = active_count_at(episode_index, dictionary.size, schedule)
    if target > dictionary.active_count:
        logger.debug("Dictionary grows %s -> %s at episode %s", dictionary.active_count, target, episode_index)
    dictionary.active_count = max(dictionary.active_count, target)
    return dictionary.active_count
