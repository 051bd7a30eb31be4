import numpy as np
import pytest

from app.core.errors import InvalidSchedule, TooManyLabels, UnmappedLabel
from app.models.config import ScheduleConfig
from app.models.episode import LabelInjection
from app.models.state import EmbeddingDictionary
from app.nn import tensor as T
from app.services.label_service import (
    active_count_at, advance_schedule, classify, classify_rows, embed_labels, query_markers, sample_injection,
)
from app.utiles.custom_helpers import derive_rng


def _dictionary(M=6, d=3, active=None):
    return EmbeddingDictionary.initialise(M, d, derive_rng(0, "dict"), np.float64, active)


def test_injection_is_one_to_one_within_active_range():
    rho = sample_injection(["a", "b", "c"], 5, derive_rng(0, "rho"))
    assert len(set(rho.indices)) == 3
    assert all(0 <= i < 5 for i in rho.indices)
    assert rho.label_of(rho.index_of("b")) == "b"


def test_injection_too_many_labels():
    with pytest.raises(TooManyLabels):
        sample_injection(["a", "b", "c"], 2, derive_rng(0, "rho"))


def test_unmapped_label():
    rho = LabelInjection(labels=("a", "b"), indices=(3, 1), active_count=4)
    with pytest.raises(UnmappedLabel):
        rho.index_of("z")
    with pytest.raises(UnmappedLabel):
        rho.label_of(0)


def test_classify_ignores_indices_outside_the_image():
    rho = LabelInjection(labels=("a", "b"), indices=(3, 1), active_count=6)
    scores = np.array([9.0, 0.5, 8.0, 1.0, 7.0, 6.0])
    assert classify(scores, rho) == "a"


def test_classify_ties_go_to_smallest_index():
    rho = LabelInjection(labels=("a", "b"), indices=(5, 2), active_count=6)
    assert classify(np.zeros(6), rho) == "b"


def test_classify_is_shift_invariant():
    rng = derive_rng(1, "shift")
    rho = sample_injection(["x", "y", "z"], 8, rng)
    scores = rng.standard_normal((10, 8))
    assert classify_rows(scores, rho) == classify_rows(scores - 42.0, rho)
    assert classify(T.Tensor(scores[0]), rho) == classify_rows(scores[:1], rho)[0]


def test_embed_labels_gradient_reaches_selected_rows_only():
    dictionary = _dictionary()
    rho = LabelInjection(labels=("a", "b"), indices=(4, 1), active_count=6)
    rows = embed_labels(dictionary, rho, ["a", "a", "b"])
    assert np.array_equal(rows.data[0], dictionary.embeddings.data[4])
    T.backward(T.reduce_sum(rows))
    grad = dictionary.embeddings.grad
    assert np.array_equal(grad[4], np.full(3, 2.0))
    assert np.array_equal(grad[1], np.ones(3))
    assert not grad[[0, 2, 3, 5]].any()


def test_query_markers_share_the_marker():
    dictionary = _dictionary()
    markers = query_markers(dictionary, 4)
    assert markers.shape == (4, 3)
    T.backward(T.reduce_sum(markers))
    assert np.array_equal(dictionary.marker.grad, np.full(3, 4.0))


def test_active_count_schedule():
    schedule = ScheduleConfig(start=4, warmup=8)
    assert [active_count_at(t, 20, schedule) for t in (0, 4, 8, 100)] == [4, 12, 20, 20]
    assert active_count_at(5, 20, ScheduleConfig()) == 20
    with pytest.raises(InvalidSchedule):
        active_count_at(0, 3, schedule)


def test_advance_schedule_never_shrinks():
    dictionary = _dictionary(M=10, active=7)
    assert advance_schedule(dictionary, 0, ScheduleConfig(start=2, warmup=4)) == 7
    assert advance_schedule(dictionary, 4, ScheduleConfig(start=2, warmup=4)) == 10


def test_dictionary_initial_scale():
    dictionary = EmbeddingDictionary.initialise(400, 25, derive_rng(0, "scale"), np.float64)
    assert dictionary.embeddings.data.var() == pytest.approx(1 / 25, rel=0.1)
    assert dictionary.active_count == 400
