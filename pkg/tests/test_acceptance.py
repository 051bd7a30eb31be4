"""Desk-scale behaviour of a trained model. Each run trains for minutes; select with `-m slow`."""
import pytest

from app.models.config import ExperimentConfig, ScheduleConfig, TaskGridConfig
from app.models.task import MetaDataset
from app.services.baseline_service import protohead_predict
from app.services.eval_service import (
    evaluate, evaluate_algorithm, extrapolation_sweep, learning_curve, model_algorithm,
)
from app.services.task_service import bayes_risk, make_task_grid
from app.services.trainer_service import episodes_to_reach, train

pytestmark = pytest.mark.slow

SEED = 0


@pytest.fixture(scope="module")
def experiment():
    return ExperimentConfig()


@pytest.fixture(scope="module")
def trained(experiment):
    meta = make_task_grid(experiment.tasks.train)
    state, _ = train(meta, experiment, SEED)
    return state.model


@pytest.fixture(scope="module")
def easy_test_tasks(experiment):
    """Held-out 5-way tasks whose Bayes accuracy is at least 99%."""
    grid = make_task_grid(TaskGridConfig(n_tasks=60, classes_range=(5, 5), seed=11, split="test"))
    easy = [t for t in grid.tasks if bayes_risk(t, samples=20_000).risk <= 0.01]
    assert easy, "no easy held-out tasks were generated"
    return MetaDataset.weighted_by_classes(easy, split="test")


def test_five_shot_five_way_accuracy(trained, easy_test_tasks):
    tail = evaluate(trained, easy_test_tasks, n_shot=5, k=5, episodes=1000, seed=SEED)
    proto = evaluate_algorithm(lambda: protohead_predict, easy_test_tasks, 5, 5, 1000, SEED, 10,
                               trained.config.d_data, trained.dictionary.active_count, name="protohead")
    assert tail.accuracy >= 0.90
    assert tail.accuracy >= proto.accuracy - 0.05


def test_one_shot_beats_chance(trained, easy_test_tasks):
    report = evaluate(trained, easy_test_tasks, n_shot=1, k=5, episodes=1000, seed=SEED)
    assert report.accuracy >= 1 / 5 + 0.30


def test_label_space_extrapolation(trained):
    wide = make_task_grid(TaskGridConfig(n_tasks=20, classes_range=(50, 50), seed=12, split="test"))
    reports = extrapolation_sweep(trained, wide, [2, 5, 10, 20, 50], n_shot=5, episodes=200, seed=SEED)
    for r in reports:
        assert r.accuracy > 2.0 / r.k
    for a, b in zip(reports, reports[1:]):
        assert b.accuracy <= a.accuracy + a.ci95 + b.ci95


def test_validity_curves(trained, easy_test_tasks):
    task = easy_test_tasks.tasks[0]
    for name, algorithm in (("tail", model_algorithm(trained)), ("protohead", protohead_predict)):
        curve = learning_curve(algorithm, task, [1, 2, 4, 8], replications=100, seed=SEED,
                               d_data=trained.config.d_data, active_count=trained.dictionary.active_count, name=name)
        assert curve.verdict == "consistent with valid", curve


def test_causal_ablation_scores_lower(experiment, trained, easy_test_tasks):
    causal = experiment.model_copy(update={"model": experiment.model.model_copy(update={"causal_mask": True})})
    state, _ = train(make_task_grid(experiment.tasks.train), causal, SEED)
    base = evaluate(trained, easy_test_tasks, n_shot=5, k=5, episodes=1000, seed=SEED)
    ablated = evaluate(state.model, easy_test_tasks, n_shot=5, k=5, episodes=1000, seed=SEED)
    assert ablated.accuracy < base.accuracy


def test_scheduled_dictionary_learns_faster(experiment):
    trainer = experiment.trainer.model_copy(update={"episodes": 5000, "validation_every": 250})
    plain = experiment.model_copy(update={"trainer": trainer})
    scheduled = experiment.model_copy(update={"trainer": trainer.model_copy(
        update={"schedule": ScheduleConfig(start=8, warmup=2500)})})
    meta = make_task_grid(experiment.tasks.train)
    validation = make_task_grid(TaskGridConfig(n_tasks=20, seed=5, split="val"))
    _, plain_records = train(meta, plain, SEED, validation=validation)
    _, scheduled_records = train(meta, scheduled, SEED, validation=validation)
    target = next(r.val_loss for r in plain_records if r.episode == 2500)
    reached = episodes_to_reach(scheduled_records, target)
    assert reached is not None and reached <= episodes_to_reach(plain_records, target)
