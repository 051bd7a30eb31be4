import numpy as np
import pytest

from app.core.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from app.core.errors import DivergedLoss, NonFiniteValue
from app.db.checkpoint import decode_checkpoint, encode_checkpoint
from app.models.config import ExperimentConfig, ScheduleConfig, TaskSourceConfig, TrainerConfig
from app.models.report import TrainRecord
from app.nn import tensor as T
from app.services import trainer_service
from app.services.trainer_service import adam_step, cyclic_lr, episodes_to_reach, init_state, train


@pytest.fixture
def experiment(small_config, grid_config):
    trainer = TrainerConfig(episodes=6, shot_values=[1, 2], way_values=[2, 3], n_query=2, max_lr=1e-3,
                            cycle_length=4, validation_every=3, validation_episodes=2, log_every=2)
    return ExperimentConfig(model=small_config, tasks=TaskSourceConfig(train=grid_config), trainer=trainer)


def _params(state):
    return {name: p.data.copy() for name, p in state.model.params.items()}


def test_cyclic_lr_triangle():
    lrs = [cyclic_lr(t, 1.0, 0.1, 8) for t in (0, 2, 4, 6, 8, 12)]
    assert lrs == pytest.approx([0.1, 0.55, 1.0, 0.55, 0.1, 1.0])


def test_adam_defaults():
    cfg = TrainerConfig()
    assert (cfg.beta1, cfg.beta2, cfg.adam_eps) == (ADAM_BETA1, ADAM_BETA2, ADAM_EPS)


def test_adam_leaves_gradient_free_parameters_alone(small_config):
    state = init_state(small_config, TrainerConfig(), seed=0)
    before = _params(state)
    state.model.zero_grad()
    adam_step(state, 1e-2)
    assert all(np.array_equal(before[n], p.data) for n, p in state.model.params.items())
    assert state.adam.step == 1


def test_adam_moves_against_the_gradient(small_config):
    state = init_state(small_config, TrainerConfig(), seed=0)
    w = state.model.params["head.b"]
    before = w.data.copy()
    state.model.zero_grad()
    T.backward(T.reduce_sum(w))
    adam_step(state, 1e-2)
    assert np.allclose(w.data, before - 1e-2, atol=1e-7)


def test_short_training_run(grid, experiment):
    state, records = train(grid, experiment, seed=0)
    assert state.episode == 6 and state.adam.step == 6
    assert [r.episode for r in records] == [2, 3, 4, 6]
    assert all(np.isfinite(r.loss) for r in records)
    assert [r.val_loss is not None for r in records] == [False, True, False, True]


def test_training_is_deterministic(grid, experiment):
    a, _ = train(grid, experiment, seed=4)
    b, _ = train(grid, experiment, seed=4)
    assert all(np.array_equal(a.model.params[n].data, b.model.params[n].data) for n in a.model.params)


def test_zero_episodes_returns_initialisation(grid, experiment, small_config):
    zero = experiment.model_copy(update={"trainer": experiment.trainer.model_copy(update={"episodes": 0})})
    state, records = train(grid, zero, seed=1)
    fresh = init_state(small_config, zero.trainer, seed=1)
    assert records == [] and state.episode == 0
    assert all(np.array_equal(state.model.params[n].data, fresh.model.params[n].data) for n in fresh.model.params)


def test_resume_matches_uninterrupted_run(grid, experiment):
    full, _ = train(grid, experiment, seed=2)
    half = experiment.model_copy(update={"trainer": experiment.trainer.model_copy(update={"episodes": 3})})
    partial, _ = train(grid, half, seed=2)
    resumed, _ = train(grid, experiment, seed=2, state=decode_checkpoint(encode_checkpoint(partial)))
    assert resumed.episode == 6
    assert all(np.array_equal(full.model.params[n].data, resumed.model.params[n].data) for n in full.model.params)
    assert all(np.array_equal(full.adam.v[n], resumed.adam.v[n]) for n in full.model.params)


def test_schedule_grows_the_dictionary(grid, experiment):
    trainer = experiment.trainer.model_copy(update={"schedule": ScheduleConfig(start=3, warmup=5), "way_values": [2, 3]})
    scheduled = experiment.model_copy(update={"trainer": trainer})
    assert init_state(scheduled.model, trainer, seed=0).model.dictionary.active_count == 3
    state, records = train(grid, scheduled, seed=0)
    counts = [r.active_count for r in records]
    assert counts == sorted(counts) and counts[-1] == 8
    assert state.model.dictionary.active_count == 8


def test_non_finite_loss_raises_with_last_state(grid, experiment, monkeypatch):
    monkeypatch.setattr(trainer_service, "episode_loss", lambda scores, episode, reduction: T.Tensor(np.array(np.nan)))
    with pytest.raises(DivergedLoss) as info:
        train(grid, experiment, seed=0)
    assert info.value.state is not None and info.value.state.episode == 0
    assert info.value.exit_code == 2
    assert isinstance(info.value.__cause__, NonFiniteValue)


def test_episodes_to_reach():
    records = [TrainRecord(episode=e, loss=1.0, lr=0.1, active_count=4, val_loss=v)
               for e, v in ((10, 2.0), (20, None), (30, 0.9), (40, 0.5))]
    assert episodes_to_reach(records, 1.0) == 30
    assert episodes_to_reach(records, 0.1) is None
