import os
import tempfile

# keep test runs quiet and out of the working tree
os.environ.setdefault("TAIL_LOG", "error")
os.environ.setdefault("TAIL_LOG_FILE", os.path.join(tempfile.gettempdir(), "tail_meta_tests.log"))

import numpy as np
import pytest

from app.models.config import ModelConfig, TaskGridConfig
from app.models.state import TailModel
from app.services.episode_service import sample_episode
from app.services.task_service import make_task_grid, synthetic_task
from app.utiles.custom_helpers import derive_rng


@pytest.fixture
def small_config():
    return ModelConfig(hidden_dim=16, n_layers=2, n_heads=2, mlp_dim=32, d_data=12, d_label=8, M=8, precision="f64")


@pytest.fixture
def small_model(small_config):
    return TailModel.initialise(small_config, derive_rng(0, "init"))


@pytest.fixture
def grid_config():
    return TaskGridConfig(n_tasks=6, dim_range=(3, 8), classes_range=(3, 4), seed=3)


@pytest.fixture
def grid(grid_config):
    return make_task_grid(grid_config)


@pytest.fixture
def episode(grid, small_config):
    return sample_episode(grid, [2], [2, 3], 2, derive_rng(0, "test-episode"), small_config.d_data, small_config.M)


@pytest.fixture
def separated_task():
    """Two classes far apart relative to their spread."""
    means = np.array([[0.0, 0.0, 0.0], [6.0, 0.0, 0.0]])
    return synthetic_task("separated", means, sigma=0.5)
