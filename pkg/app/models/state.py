# app/models/state.py
"""
Mutable model state: the label-embedding dictionary, the transformer's named
parameters, and the trainer state that wraps both with Adam moments. These are
the checkpointable units.
"""
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from app.models.config import ModelConfig, ScheduleConfig, TrainerConfig
from app.nn.tensor import DTYPES, Tensor, parameter
from app.utiles.logger import get_logger

logger = get_logger(__name__)

EMBEDDINGS = "label.embeddings"
MARKER = "label.marker"


class EmbeddingDictionary:
    """E = {e_1..e_M} plus the query class marker c; `active_count` is schedule state."""

    def __init__(self, embeddings: Tensor, marker: Tensor, active_count: Optional[int] = None):
        self.embeddings = embeddings
        self.marker = marker
        self.active_count = int(active_count if active_count is not None else embeddings.shape[0])
        if not 1 <= self.active_count <= self.size:
            raise ValueError(f"active_count {self.active_count} outside [1, {self.size}]")

    @property
    def size(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def d_label(self) -> int:
        return int(self.embeddings.shape[1])

    @classmethod
    def initialise(cls, M: int, d_label: int, rng: np.random.Generator, dtype=np.float32,
                   active_count: Optional[int] = None) -> "EmbeddingDictionary":
        scale = 1.0 / np.sqrt(d_label)
        return cls(
            parameter(rng.standard_normal((M, d_label)) * scale, dtype),
            parameter(rng.standard_normal(d_label) * scale, dtype),
            active_count,
        )


def _layer_names(layer: int) -> List[str]:
    prefix = f"block{layer}."
    return [prefix + n for n in (
        "ln1.gain", "ln1.bias",
        "attn.w_q", "attn.b_q", "attn.w_k", "attn.b_k", "attn.w_v", "attn.b_v", "attn.w_o", "attn.b_o",
        "ln2.gain", "ln2.bias",
        "mlp.w_in", "mlp.b_in", "mlp.w_out", "mlp.b_out",
    )]


class TailModel:
    """
    Named parameters of the inference function g_theta.

    `params` is ordered: input map, blocks, final norm, score head, then the
    dictionary rows and marker (the same Tensor objects `dictionary` holds).
    """

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor], active_count: Optional[int] = None):
        self.config = config
        self.params = params
        self.dictionary = EmbeddingDictionary(params[EMBEDDINGS], params[MARKER], active_count)

    @classmethod
    def initialise(cls, config: ModelConfig, rng: np.random.Generator, active_count: Optional[int] = None) -> "TailModel":
        dtype = DTYPES[config.precision]
        h, f = config.hidden_dim, config.mlp_dim

        def dense(fan_in: int, fan_out: int) -> Tensor:
            return parameter(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in), dtype)

        def zeros(*shape: int) -> Tensor:
            return parameter(np.zeros(shape), dtype)

        def ones(*shape: int) -> Tensor:
            return parameter(np.ones(shape), dtype)

        params: Dict[str, Tensor] = {"input.w": dense(config.token_dim, h), "input.b": zeros(h)}
        for layer in range(config.n_layers):
            (ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2) = _layer_names(layer)
            params.update({
                ln1_g: ones(h), ln1_b: zeros(h),
                wq: dense(h, h), bq: zeros(h),
                wk: dense(h, h), bk: zeros(h),
                wv: dense(h, h), bv: zeros(h),
                wo: dense(h, h), bo: zeros(h),
                ln2_g: ones(h), ln2_b: zeros(h),
                w1: dense(h, f), b1: zeros(f),
                w2: dense(f, h), b2: zeros(h),
            })
        params.update({
            "final_ln.gain": ones(h), "final_ln.bias": zeros(h),
            "head.w": dense(h, config.M), "head.b": zeros(config.M),
        })
        dictionary = EmbeddingDictionary.initialise(config.M, config.d_label, rng, dtype)
        params[EMBEDDINGS] = dictionary.embeddings
        params[MARKER] = dictionary.marker
        logger.info("Initialised TAIL model: %s parameters in %s tensors (%s)",
                    sum(p.data.size for p in params.values()), len(params), config.precision)
        return cls(config, params, active_count)

    @staticmethod
    def layer_names(layer: int) -> List[str]:
        return _layer_names(layer)

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @property
    def dtype(self):
        return self.params["input.w"].dtype

    def astype(self, precision: str) -> "TailModel":
        """Copy in another precision (f64 for checks); active_count is preserved."""
        dtype = DTYPES[precision]
        params = {name: parameter(p.data, dtype) for name, p in self.params.items()}
        return TailModel(self.config.model_copy(update={"precision": precision}), params, self.dictionary.active_count)

    def snapshot(self) -> "TailModel":
        """Independent copy with the same dtype, for read-only use on other threads."""
        params = {name: parameter(p.data.copy(), p.dtype) for name, p in self.params.items()}
        return TailModel(self.config, params, self.dictionary.active_count)


class AdamState:
    def __init__(self, params: Dict[str, Tensor]):
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.step = 0


class TrainerState:
    """Model + optimizer moments + episode counter + schedule; `episode` counts completed episodes."""

    def __init__(self, model: TailModel, trainer: TrainerConfig, seed: int,
                 adam: Optional[AdamState] = None, episode: int = 0):
        self.model = model
        self.trainer = trainer
        self.seed = int(seed)
        self.adam = adam or AdamState(model.params)
        self.episode = int(episode)

    @property
    def schedule(self) -> ScheduleConfig:
        return self.trainer.schedule
