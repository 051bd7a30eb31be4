# app/services/model_service.py
"""
The demonstration-conditioned inference function: token assembly, the
pre-norm transformer encoder and the score head.

Attention layout (no positional information anywhere):
- support rows attend to support rows only (lower-triangular among supports
  under the causal ablation);
- each query row attends to every support row and to itself, never to other
  queries.
With this layout a query's scores do not depend on which other queries share
the pass, so one inline pass equals q single-query passes.
"""
import math
from typing import List, Optional, Sequence

import numpy as np

from app.core.errors import ConfigMismatch, DimTooLarge, LengthMismatch, TooManyLabels, WidthMismatch
from app.models.episode import Episode, FeatureProjection, LabelInjection, TokenSequence
from app.models.state import EmbeddingDictionary, TailModel
from app.nn.tensor import (
    Tensor, add, concat, gelu, layer_norm, matmul, mul, no_grad, reshape, rowdot, softmax, swapaxes, take,
)
from app.services.encoding_service import apply_projection, sample_projection
from app.services.label_service import classify_rows, embed_labels, query_markers, sample_injection
from app.utiles.logger import get_logger

logger = get_logger(__name__)


class ForwardCounter:
    """Per-call accounting: forward passes and dense-equivalent attention score elements."""

    def __init__(self) -> None:
        self.fwd_passes = 0
        self.attn_elems = 0

    def record(self, n_layers: int, length: int) -> None:
        self.fwd_passes += 1
        self.attn_elems += n_layers * length * length


def inline_attention_elements(n_layers: int, n: int, q: int) -> int:
    return n_layers * (n + q) ** 2


def per_query_attention_elements(n_layers: int, n: int, q: int) -> int:
    return n_layers * q * (n + 1) ** 2


# --------------------------
# Sequence assembly
# --------------------------
def assemble_sequence(episode: Episode, dictionary: EmbeddingDictionary, queries: np.ndarray,
                      d_data: Optional[int] = None) -> TokenSequence:
    """
    Z = support tokens [pi(x_i), E(rho(y_i))] in episode order, then query
    tokens [pi(x'), c]. `queries` are raw d_T feature rows.
    """
    return assemble_tokens(episode.pi, episode.rho, episode.support_x, episode.support_y, queries, dictionary, d_data)


def assemble_tokens(pi: FeatureProjection, rho: LabelInjection, support_x: np.ndarray, support_y: Sequence[str],
                    queries: np.ndarray, dictionary: EmbeddingDictionary, d_data: Optional[int] = None) -> TokenSequence:
    queries = np.atleast_2d(np.asarray(queries))
    if queries.shape[0] < 1:
        raise ValueError("at least one query is required")
    dtype = dictionary.embeddings.dtype
    support_features = np.atleast_2d(apply_projection(pi, support_x))
    query_features = apply_projection(pi, queries)
    width = support_features.shape[1]
    if d_data is not None and width != d_data:
        logger.error("WidthMismatch: projected width %s, model expects d_data=%s", width, d_data)
        raise WidthMismatch(f"projected feature width {width} does not match d_data={d_data}")

    n, q = support_features.shape[0], query_features.shape[0]
    support = concat([Tensor(support_features, dtype=dtype), embed_labels(dictionary, rho, support_y)], axis=1)
    query = concat([Tensor(query_features, dtype=dtype), query_markers(dictionary, q)], axis=1)
    tokens = concat([support, query], axis=0)
    is_query = np.zeros(n + q, dtype=bool)
    is_query[n:] = True
    return TokenSequence(tokens=tokens, is_query=is_query, n_support=n)


# --------------------------
# Encoder
# --------------------------
def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _heads(x: Tensor, n_heads: int) -> Tensor:
    """(L, h) -> (H, L, h/H)."""
    length, width = x.shape
    return swapaxes(reshape(x, (length, n_heads, width // n_heads)), 0, 1)


def _merge(x: Tensor) -> Tensor:
    """(H, L, dh) -> (L, H*dh)."""
    n_heads, length, dh = x.shape
    return reshape(swapaxes(x, 0, 1), (length, n_heads * dh))


def _attention(model: TailModel, layer: int, hs: Optional[Tensor], hq: Tensor):
    p = model.params
    cfg = model.config
    prefix = f"block{layer}."
    scale = 1.0 / math.sqrt(cfg.hidden_dim // cfg.n_heads)

    def project(x: Tensor, name: str) -> Tensor:
        return _heads(_linear(x, p[prefix + f"attn.w_{name}"], p[prefix + f"attn.b_{name}"]), cfg.n_heads)

    aq = layer_norm(hq, p[prefix + "ln1.gain"], p[prefix + "ln1.bias"])
    q_q, k_q, v_q = project(aq, "q"), project(aq, "k"), project(aq, "v")
    self_score = mul(rowdot(q_q, k_q), scale)                              # (H, q, 1)

    if hs is None:
        out_q = mul(softmax(self_score, axis=-1), v_q)
        return None, _linear(_merge(out_q), p[prefix + "attn.w_o"], p[prefix + "attn.b_o"])

    a_s = layer_norm(hs, p[prefix + "ln1.gain"], p[prefix + "ln1.bias"])
    q_s, k_s, v_s = project(a_s, "q"), project(a_s, "k"), project(a_s, "v")
    k_s_t = swapaxes(k_s, 1, 2)
    n = hs.shape[0]

    mask = np.tril(np.ones((n, n), dtype=bool)) if cfg.causal_mask else None
    probs_s = softmax(mul(matmul(q_s, k_s_t), scale), axis=-1, mask=mask)
    out_s = matmul(probs_s, v_s)

    probs_q = softmax(concat([mul(matmul(q_q, k_s_t), scale), self_score], axis=-1), axis=-1)
    out_q = add(matmul(take(probs_q, (slice(None), slice(None), slice(0, n))), v_s),
                mul(take(probs_q, (slice(None), slice(None), slice(n, n + 1))), v_q))

    w_o, b_o = p[prefix + "attn.w_o"], p[prefix + "attn.b_o"]
    return _linear(_merge(out_s), w_o, b_o), _linear(_merge(out_q), w_o, b_o)


def _mlp(model: TailModel, layer: int, x: Tensor) -> Tensor:
    p = model.params
    prefix = f"block{layer}."
    a = layer_norm(x, p[prefix + "ln2.gain"], p[prefix + "ln2.bias"])
    return _linear(gelu(_linear(a, p[prefix + "mlp.w_in"], p[prefix + "mlp.b_in"])),
                   p[prefix + "mlp.w_out"], p[prefix + "mlp.b_out"])


def forward(model: TailModel, seq: TokenSequence, counter: Optional[ForwardCounter] = None) -> Tensor:
    """Scores (q, M) for the query rows of `seq`."""
    cfg = model.config
    if seq.tokens.ndim != 2 or seq.tokens.shape[1] != cfg.token_dim:
        logger.error("ConfigMismatch: token width %s, model expects %s", seq.tokens.shape[-1], cfg.token_dim)
        raise ConfigMismatch(f"token width {seq.tokens.shape[-1]} does not match d_data + d_label = {cfg.token_dim}")
    if seq.tokens.dtype != model.dtype:
        raise ConfigMismatch(f"token dtype {seq.tokens.dtype} does not match parameters ({model.dtype})")

    p = model.params
    n = seq.n_support
    length = seq.tokens.shape[0]
    # supports and queries are projected separately so support rows never depend on q
    hs = _linear(take(seq.tokens, slice(0, n)), p["input.w"], p["input.b"]) if n else None
    hq = _linear(take(seq.tokens, slice(n, length)), p["input.w"], p["input.b"])

    for layer in range(cfg.n_layers):
        delta_s, delta_q = _attention(model, layer, hs, hq)
        hq = add(hq, delta_q)
        hq = add(hq, _mlp(model, layer, hq))
        if hs is not None:
            hs = add(hs, delta_s)
            hs = add(hs, _mlp(model, layer, hs))

    if counter is not None:
        counter.record(cfg.n_layers, length)
    out = layer_norm(hq, p["final_ln.gain"], p["final_ln.bias"])
    return _linear(out, p["head.w"], p["head.b"])


# --------------------------
# Prediction
# --------------------------
def episode_scores(model: TailModel, episode: Episode, queries: Optional[np.ndarray] = None,
                   counter: Optional[ForwardCounter] = None) -> Tensor:
    """All query rows inline in one pass."""
    queries = episode.query_x if queries is None else queries
    seq = assemble_sequence(episode, model.dictionary, queries, model.config.d_data)
    return forward(model, seq, counter)


def episode_scores_per_query(model: TailModel, episode: Episode, queries: Optional[np.ndarray] = None,
                             counter: Optional[ForwardCounter] = None) -> Tensor:
    """One pass per query row; the reference the inline pass must reproduce."""
    queries = np.atleast_2d(episode.query_x if queries is None else queries)
    rows = [episode_scores(model, episode, queries[i:i + 1], counter) for i in range(queries.shape[0])]
    return concat(rows, axis=0)


def predict(model: TailModel, episode: Episode, mode: str = "inline",
            counter: Optional[ForwardCounter] = None, queries: Optional[np.ndarray] = None) -> List[str]:
    """project -> embed -> assemble -> forward -> restricted argmax, one label per query."""
    if mode == "inline":
        scores = episode_scores(model, episode, queries, counter)
    elif mode == "per-query":
        scores = episode_scores_per_query(model, episode, queries, counter)
    else:
        raise ValueError(f"unknown query mode {mode!r}")
    return classify_rows(scores.data, episode.rho)


def check_model_fits(model: TailModel, d_t: int, k: int) -> None:
    if d_t > model.config.d_data:
        logger.error("DimTooLarge: d_T=%s > d_data=%s", d_t, model.config.d_data)
        raise DimTooLarge(f"d_T={d_t} does not fit the model's d_data={model.config.d_data}")
    if k > model.dictionary.active_count:
        logger.error("TooManyLabels: K=%s > active dictionary size %s", k, model.dictionary.active_count)
        raise TooManyLabels(f"K={k} exceeds the active dictionary size {model.dictionary.active_count}")


def accuracy(predicted: Sequence[str], actual: Sequence[str]) -> float:
    return float(np.mean([a == b for a, b in zip(predicted, actual)])) if actual else 0.0


def predict_raw(model: TailModel, support_x: np.ndarray, support_y: Sequence[str], query_x: np.ndarray,
                rng: np.random.Generator) -> List[str]:
    """Predict for a caller-supplied support set with freshly drawn pi and rho."""
    support_x = np.atleast_2d(np.asarray(support_x, dtype=np.float64))
    query_x = np.atleast_2d(np.asarray(query_x, dtype=np.float64))
    if support_x.shape[0] != len(support_y):
        raise LengthMismatch(f"{support_x.shape[0]} support rows but {len(support_y)} labels")
    if query_x.shape[1] != support_x.shape[1]:
        raise LengthMismatch(f"query width {query_x.shape[1]} differs from support width {support_x.shape[1]}")
    labels = list(dict.fromkeys(support_y))
    check_model_fits(model, support_x.shape[1], len(labels))
    pi = sample_projection(model.config.projection, support_x.shape[1], model.config.d_data, rng)
    rho = sample_injection(labels, model.dictionary.active_count, rng)
    with no_grad():
        seq = assemble_tokens(pi, rho, support_x, support_y, query_x, model.dictionary, model.config.d_data)
        scores = forward(model, seq)
    return classify_rows(scores.data, rho)
