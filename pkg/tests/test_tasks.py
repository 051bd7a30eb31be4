import numpy as np
import pytest

from app.core.errors import DimTooLarge, InsufficientSamples, NotSynthetic, UnknownLabel
from app.models.config import FeatureFileConfig, TaskGridConfig
from app.models.task import FeatureStore, MetaDataset
from app.services.task_service import (
    bayes_risk, bayes_risk_closed_form, check_compatible, make_task_grid, sample_labelled, synthetic_task,
    task_from_store,
)
from app.utiles.custom_helpers import derive_rng


def _store():
    features = np.arange(24, dtype=np.float32).reshape(8, 3)
    return FeatureStore(path="mem", features=features, row_labels=np.array([0, 0, 0, 1, 1, 1, 1, 2]),
                        label_names=("cat", "dog", "eel"))


def test_task_grid_is_deterministic(grid_config):
    a, b = make_task_grid(grid_config), make_task_grid(grid_config)
    assert [t.name for t in a.tasks] == [t.name for t in b.tasks]
    for ta, tb in zip(a.tasks, b.tasks):
        assert np.array_equal(ta.source.means, tb.source.means)
        assert 3 <= ta.feature_dim <= 8 and 3 <= ta.way <= 4


def test_task_grid_weights_follow_class_counts(grid):
    ways = np.array([t.way for t in grid.tasks], dtype=float)
    assert np.allclose(grid.probabilities, ways / ways.sum())


def test_splits_do_not_share_tasks():
    train = make_task_grid(TaskGridConfig(n_tasks=3, split="train"))
    test = make_task_grid(TaskGridConfig(n_tasks=3, split="test"))
    assert not np.array_equal(train.tasks[0].source.means, test.tasks[0].source.means)


def test_task_needs_two_distinct_labels():
    with pytest.raises(ValueError):
        synthetic_task("one", np.zeros((1, 2)))
    with pytest.raises(ValueError):
        synthetic_task("dup", np.zeros((2, 2)), labels=["a", "a"])


def test_sample_labelled_synthetic(separated_task):
    x, y, rows = sample_labelled(separated_task, separated_task.labels[1], 500, derive_rng(0, "t"))
    assert x.shape == (500, 3) and rows is None
    assert set(y) == {separated_task.labels[1]}
    assert np.allclose(x.mean(axis=0), [6.0, 0.0, 0.0], atol=0.1)


def test_sample_labelled_unknown_label(separated_task):
    with pytest.raises(UnknownLabel):
        sample_labelled(separated_task, "nope", 1, derive_rng(0, "t"))


def test_sample_labelled_from_store():
    task = task_from_store(_store(), FeatureFileConfig(path="mem", labels=["cat", "dog"], name="pets"))
    x, y, rows = sample_labelled(task, "dog", 3, derive_rng(0, "t"), exclude=[3])
    assert set(rows) <= {4, 5, 6}
    assert np.array_equal(x, _store().features[rows])
    with pytest.raises(InsufficientSamples):
        sample_labelled(task, "cat", 4, derive_rng(0, "t"))


def test_task_from_store_unknown_label():
    with pytest.raises(UnknownLabel):
        task_from_store(_store(), FeatureFileConfig(path="mem", labels=["cat", "fox"]))


def test_bayes_risk_matches_closed_form():
    task = synthetic_task("pair", np.array([[0.0, 0.0], [2.0, 0.0]]), sigma=1.0)
    exact = bayes_risk_closed_form(task)
    estimate = bayes_risk(task, samples=200_000)
    assert exact == pytest.approx(0.158655, abs=1e-5)
    assert abs(estimate.risk - exact) < 4 * estimate.std_error + 1e-4


def test_bayes_risk_degenerate_sigma():
    task = synthetic_task("point", np.array([[0.0, 0.0], [1.0, 0.0]]), sigma=0.0)
    assert bayes_risk(task).risk == 0.0
    assert bayes_risk_closed_form(task) == 0.0


def test_bayes_risk_needs_synthetic_task():
    task = task_from_store(_store(), FeatureFileConfig(path="mem"))
    with pytest.raises(NotSynthetic):
        bayes_risk(task)


def test_check_compatible_rejects_wide_tasks(grid):
    check_compatible(grid, 8)
    with pytest.raises(DimTooLarge):
        check_compatible(grid, 2)


def test_meta_dataset_rejects_bad_weights(separated_task):
    with pytest.raises(ValueError):
        MetaDataset(tasks=(separated_task,), weights=(0.0,))
