# app/db/model_store.py
"""In-process registry holding the checkpoint served by the HTTP app."""
import threading
from typing import Optional

from app.core.config import CHECKPOINT_ENV
from app.db.checkpoint import load_checkpoint
from app.models.state import TrainerState
from app.utiles.logger import get_logger

logger = get_logger(__name__)

_lock = threading.Lock()
_state: Optional[TrainerState] = None
_path: Optional[str] = None


def load_model(path: str) -> TrainerState:
    """Load a checkpoint and make it the served model."""
    global _state, _path
    state = load_checkpoint(path)
    with _lock:
        _state, _path = state, path
    logger.info("Serving model from %s (M=%s, d_data=%s)", path, state.model.config.M, state.model.config.d_data)
    return state


def set_model(state: TrainerState, path: Optional[str] = None) -> None:
    global _state, _path
    with _lock:
        _state, _path = state, path


def get_model() -> TrainerState:
    with _lock:
        state = _state
    if state is None:
        logger.error("No model loaded; set %s or call load_model()", CHECKPOINT_ENV)
        raise LookupError(f"no model loaded; set {CHECKPOINT_ENV} to a checkpoint path")
    return state


def model_path() -> Optional[str]:
    return _path


def unload_model() -> None:
    global _state, _path
    with _lock:
        if _state is not None:
            logger.warning("Model unloaded (%s)", _path)
        _state, _path = None, None
