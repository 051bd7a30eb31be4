# app/services/trainer_service.py
from typing import Callable, List, Optional, Tuple

import numpy as np

from app.core.errors import DivergedLoss, NonFiniteValue
from app.models.config import ExperimentConfig, ModelConfig, TrainerConfig
from app.models.episode import Episode
from app.models.report import TrainRecord
from app.models.state import TailModel, TrainerState
from app.models.task import MetaDataset
from app.nn.tensor import backward, no_grad
from app.services.episode_service import episode_loss, sample_episode
from app.services.label_service import active_count_at, advance_schedule
from app.services.model_service import episode_scores
from app.services.task_service import check_compatible
from app.utiles.custom_helpers import derive_rng
from app.utiles.logger import get_logger

logger = get_logger(__name__)


# --------------------------
# Learning-rate schedule
# --------------------------
def cyclic_lr(iteration: int, max_lr: float, base_lr: float, cycle_length: int) -> float:
    """Symmetric triangular wave: base_lr at the start of each cycle, max_lr halfway through."""
    step_size = cycle_length / 2.0
    cycle = np.floor(1 + iteration / (2 * step_size))
    x = np.abs(iteration / step_size - 2 * cycle + 1)
    return float(base_lr + (max_lr - base_lr) * max(0.0, 1.0 - x))


# --------------------------
# Adam
# --------------------------
def adam_step(state: TrainerState, lr: float) -> None:
    cfg = state.trainer
    adam = state.adam
    adam.step += 1
    bias1 = 1.0 - cfg.beta1 ** adam.step
    bias2 = 1.0 - cfg.beta2 ** adam.step
    for name, p in state.model.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = adam.m[name] = cfg.beta1 * adam.m[name] + (1.0 - cfg.beta1) * g
        v = adam.v[name] = cfg.beta2 * adam.v[name] + (1.0 - cfg.beta2) * g * g
        p.data -= (lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.adam_eps)).astype(p.data.dtype, copy=False)


# --------------------------
# State
# --------------------------
def init_state(model_config: ModelConfig, trainer: TrainerConfig, seed: int) -> TrainerState:
    model = TailModel.initialise(model_config, derive_rng(seed, "init"),
                                 active_count=active_count_at(0, model_config.M, trainer.schedule))
    return TrainerState(model, trainer, seed)


def validation_episodes(meta: MetaDataset, model_config: ModelConfig, trainer: TrainerConfig, seed: int) -> List[Episode]:
    """Fixed held-out episode set; rho draws from the full dictionary."""
    return [
        sample_episode(meta, trainer.shot_values, trainer.way_values, trainer.n_query,
                       derive_rng(seed, "validation", i), model_config.d_data, model_config.M,
                       model_config.projection, episode_seed=i)
        for i in range(trainer.validation_episodes)
    ]


def mean_loss(model: TailModel, episodes: List[Episode], reduction: str = "mean") -> float:
    with no_grad():
        return float(np.mean([episode_loss(episode_scores(model, ep), ep, reduction).item() for ep in episodes]))


# --------------------------
# Training loop
# --------------------------
def train(
    meta: MetaDataset,
    experiment: ExperimentConfig,
    seed: int,
    state: Optional[TrainerState] = None,
    validation: Optional[MetaDataset] = None,
    on_record: Optional[Callable[[TrainRecord], None]] = None,
) -> Tuple[TrainerState, List[TrainRecord]]:
    """
    Episode loop: sample -> grow dictionary -> scores -> loss -> backward -> Adam.

    Episode t always uses derive_rng(seed, "train", t), so resuming from a
    checkpoint saved after episode t reproduces the uninterrupted run.
    """
    model_cfg, cfg = experiment.model, experiment.trainer
    check_compatible(meta, model_cfg.d_data)
    state = state or init_state(model_cfg, cfg, seed)
    model = state.model
    records: List[TrainRecord] = []

    held_out = []
    if cfg.validation_every:
        held_out = validation_episodes(validation or meta, model_cfg, cfg, seed)

    logger.info("Training from episode %s to %s (seed=%s, max_lr=%s)", state.episode, cfg.episodes, seed, cfg.max_lr)
    for t in range(state.episode, cfg.episodes):
        rng = derive_rng(seed, "train", t)
        active = advance_schedule(model.dictionary, t, cfg.schedule)
        episode = sample_episode(meta, cfg.shot_values, cfg.way_values, cfg.n_query, rng,
                                 model_cfg.d_data, active, model_cfg.projection, episode_seed=t)

        model.zero_grad()
        loss = episode_loss(episode_scores(model, episode), episode, cfg.loss_reduction)
        try:
            value = loss.check_finite(f"loss at episode {t}").item()
        except NonFiniteValue as e:
            logger.error("DivergedLoss: %s", e)
            raise DivergedLoss(f"loss became non-finite ({loss.item()}) at episode {t}", state=state) from e
        backward(loss)
        lr = cyclic_lr(t, cfg.max_lr, cfg.base_lr, cfg.cycle_length)
        adam_step(state, lr)
        state.episode = t + 1

        val_loss = None
        if held_out and state.episode % cfg.validation_every == 0:
            val_loss = mean_loss(model, held_out, cfg.loss_reduction)
        if val_loss is not None or state.episode % cfg.log_every == 0 or state.episode == cfg.episodes:
            record = TrainRecord(episode=state.episode, loss=value, lr=lr, active_count=active, val_loss=val_loss)
            records.append(record)
            logger.debug("episode=%s loss=%.5f lr=%.3g active=%s val=%s", record.episode, value, lr, active, val_loss)
            if on_record:
                on_record(record)

    logger.info("Training finished at episode %s", state.episode)
    return state, records


def episodes_to_reach(records: List[TrainRecord], target: float) -> Optional[int]:
    """First episode whose validation loss is at or below `target`."""
    for r in records:
        if r.val_loss is not None and r.val_loss <= target:
            return r.episode
    return None
