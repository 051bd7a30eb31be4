# app/services/verify_service.py
"""
Executable property suite: symmetry properties of the inference function,
sampling uniformity and coverage, gradient correctness and the inline-query
equivalence. Every check returns a PropertyResult; nothing here raises on a
failed property.
"""
from collections import Counter
from itertools import permutations
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy.stats import chisquare

from app.models.config import ModelConfig, VerifyConfig
from app.models.episode import Episode
from app.models.report import PropertyResult
from app.models.state import EMBEDDINGS, TailModel
from app.models.task import MetaDataset
from app.nn import tensor as T
from app.nn.gradcheck import check_gradients
from app.services.encoding_service import (
    chernoff_lower_tail, coordinate_coverage_counts, coverage_within, sample_extended_permutation,
)
from app.services.episode_service import (
    episode_for_task, episode_loss, permute_features, permute_support, relabel, sample_episode,
)
from app.services.label_service import classify, classify_rows, sample_injection
from app.services.model_service import (
    ForwardCounter, episode_scores, episode_scores_per_query, inline_attention_elements,
    per_query_attention_elements,
)
from app.services.task_service import synthetic_task
from app.utiles.custom_helpers import derive_rng
from app.utiles.logger import get_logger

logger = get_logger(__name__)

LOGIT_TOLERANCE = 1e-10
CHI_SQUARE_ALPHA = 1e-3
GRADIENT_TOLERANCE = 1e-4


# --------------------------
# Helper functions
# --------------------------
def _episodes(model: TailModel, meta: MetaDataset, count: int, seed: int, stream: str,
              way_values=(2, 3, 4, 5), shot_values=(1, 2, 3, 4, 5), n_query: int = 3) -> List[Episode]:
    ways = [k for k in way_values if k <= model.dictionary.active_count] or [2]
    return [
        sample_episode(meta, shot_values, ways, n_query, derive_rng(seed, stream, i),
                       model.config.d_data, model.dictionary.active_count, model.config.projection, episode_seed=i)
        for i in range(count)
    ]


def _scores(model: TailModel, episode: Episode) -> np.ndarray:
    with T.no_grad():
        return episode_scores(model, episode).data


def _labels(model: TailModel, episode: Episode) -> List[str]:
    return classify_rows(_scores(model, episode), episode.rho)


# --------------------------
# Symmetry properties
# --------------------------
def check_order_invariance(model: TailModel, meta: MetaDataset, episodes: int, perms: int, seed: int) -> PropertyResult:
    worst, mismatched = 0.0, 0
    for ep in _episodes(model, meta, episodes, seed, "verify/order"):
        base = _scores(model, ep)
        labels = classify_rows(base, ep.rho)
        for j in range(perms):
            order = derive_rng(seed, "verify/order-perm", ep.episode_seed * perms + j).permutation(ep.n)
            other = _scores(model, permute_support(ep, order))
            worst = max(worst, float(np.max(np.abs(other - base))))
            mismatched += classify_rows(other, ep.rho) != labels
    passed = mismatched == 0 and worst <= LOGIT_TOLERANCE
    return PropertyResult(name="order invariance", passed=passed,
                          detail=f"{episodes}x{perms} permutations, max |dlogit|={worst:.3e}, label mismatches={mismatched}")


def check_label_equivariance(model: TailModel, meta: MetaDataset, episodes: int, perms: int, seed: int) -> PropertyResult:
    failures = 0
    for ep in _episodes(model, meta, episodes, seed, "verify/labels"):
        base = _labels(model, ep)
        for j in range(perms):
            shuffled = derive_rng(seed, "verify/labels-perm", ep.episode_seed * perms + j).permutation(ep.way)
            sigma: Dict[str, str] = {a: ep.labels[i] for a, i in zip(ep.labels, shuffled)}
            moved = _labels(model, relabel(ep, sigma))
            failures += moved != [sigma[y] for y in base]
    return PropertyResult(name="label re-indexing equivariance", passed=failures == 0,
                          detail=f"{episodes}x{perms} relabelings, failures={failures}")


def check_feature_equivariance(model: TailModel, meta: MetaDataset, episodes: int, perms: int, seed: int) -> PropertyResult:
    if model.config.projection == "gaussian":
        return PropertyResult(name="feature-coordinate equivariance", passed=True,
                              detail="skipped: the paired form needs an extended-permutation projection")
    failures = 0
    for ep in _episodes(model, meta, episodes, seed, "verify/features"):
        base = _labels(model, ep)
        for j in range(perms):
            perm = derive_rng(seed, "verify/features-perm", ep.episode_seed * perms + j).permutation(ep.pi.source_dim)
            failures += _labels(model, permute_features(ep, perm)) != base
    return PropertyResult(name="feature-coordinate equivariance", passed=failures == 0,
                          detail=f"{episodes}x{perms} coordinate permutations, failures={failures}")


def check_classify_shift(seed: int, trials: int = 100) -> PropertyResult:
    rng = derive_rng(seed, "verify/shift")
    failures = 0
    for _ in range(trials):
        rho = sample_injection(["a", "b", "c"], 8, rng)
        scores = rng.standard_normal(8)
        failures += classify(scores, rho) != classify(scores + rng.normal() * 10.0, rho)
    return PropertyResult(name="classify shift invariance", passed=failures == 0, detail=f"{trials} trials, failures={failures}")


# --------------------------
# Sampling statistics
# --------------------------
def _chi_square_uniform(draw: Callable[[], Tuple[int, ...]], outcomes: List[Tuple[int, ...]], draws: int) -> Tuple[float, int]:
    counts = Counter(draw() for _ in range(draws))
    known = set(outcomes)
    unexpected = sum(c for o, c in counts.items() if o not in known)
    observed = np.array([counts.get(o, 0) for o in outcomes])
    return float(chisquare(observed).pvalue), unexpected


def check_uniformity(draws: int, seed: int) -> List[PropertyResult]:
    rng = derive_rng(seed, "verify/uniform-pi")
    outcomes = list(permutations(range(4), 2))
    p_pi, bad_pi = _chi_square_uniform(lambda: tuple(int(i) for i in sample_extended_permutation(2, 4, rng).index_map),
                                       outcomes, draws)
    rng = derive_rng(seed, "verify/uniform-rho")
    p_rho, bad_rho = _chi_square_uniform(lambda: sample_injection(["a", "b"], 4, rng).indices, outcomes, draws)
    return [
        PropertyResult(name="extended-permutation uniformity", passed=p_pi > CHI_SQUARE_ALPHA and bad_pi == 0,
                       detail=f"d_T=2, d_data=4, {draws} draws, chi-square p={p_pi:.4f}"),
        PropertyResult(name="label-injection uniformity", passed=p_rho > CHI_SQUARE_ALPHA and bad_rho == 0,
                       detail=f"K=2, M=4, {draws} draws, chi-square p={p_rho:.4f}"),
    ]


def embedding_selection_counts(t: int, k: int, active_count: int, rng: np.random.Generator) -> np.ndarray:
    counts = np.zeros(active_count, dtype=np.int64)
    labels = [str(i) for i in range(k)]
    for _ in range(t):
        counts[list(sample_injection(labels, active_count, rng).indices)] += 1
    return counts


def check_coverage(t: int, seed: int, k: int = 5, active_count: int = 50, d_t: int = 32, d_data: int = 64) -> List[PropertyResult]:
    delta = 0.5
    emb = embedding_selection_counts(t, k, active_count, derive_rng(seed, "verify/emb-coverage"))
    p_emb = k / active_count
    rng = derive_rng(seed, "verify/coord-coverage")
    coords = coordinate_coverage_counts((sample_extended_permutation(d_t, d_data, rng) for _ in range(t)), d_data)
    p_coord = d_t / d_data

    def low_tail_ok(counts: np.ndarray, p: float) -> bool:
        # the empirical low-tail frequency may exceed the Chernoff bound only by sampling noise
        frac = float(np.mean(counts <= (1 - delta) * t * p))
        return frac <= chernoff_lower_tail(t, p, delta) + 3.0 / np.sqrt(counts.size)

    return [
        PropertyResult(name="embedding coverage", passed=coverage_within(emb, t, p_emb) and emb.min() > 0 and low_tail_ok(emb, p_emb),
                       detail=f"t={t}, K={k}, M={active_count}, counts in [{emb.min()}, {emb.max()}], mean {t * p_emb:.0f}"),
        PropertyResult(name="coordinate coverage", passed=coverage_within(coords, t, p_coord) and coords.min() > 0 and low_tail_ok(coords, p_coord),
                       detail=f"t={t}, d_T={d_t}, d_data={d_data}, counts in [{coords.min()}, {coords.max()}], mean {t * p_coord:.0f}"),
    ]


# --------------------------
# Gradients
# --------------------------
def toy_episode(model_config: ModelConfig, seed: int, n_shot: int = 1, n_query: int = 1, k: int = 2) -> Episode:
    rng = derive_rng(seed, "verify/toy-task")
    d_t = min(4, model_config.d_data)
    task = synthetic_task("toy", rng.standard_normal((k, d_t)) * 2.0)
    return episode_for_task(task, k, n_shot, n_query, derive_rng(seed, "verify/toy-episode"),
                            model_config.d_data, model_config.M)


def check_primitive_gradients(seed: int) -> PropertyResult:
    rng = derive_rng(seed, "verify/primitive-grads")

    def p(*shape):
        return T.parameter(rng.standard_normal(shape), np.float64)

    a, b = p(4, 5), p(5, 3)
    x7 = p(7)
    x, gain, bias = p(3, 8), p(8), p(8)
    g16 = p(16)
    s = p(6)
    mask = np.array([True, True, False, True, True, False])
    weights = rng.standard_normal(7)
    ln_weights = rng.standard_normal((3, 8))
    cases = {
        "matmul": (lambda: T.reduce_sum(T.matmul(a, b)), {"a": a, "b": b}),
        "softmax": (lambda: T.reduce_sum(T.mul(T.softmax(x7), weights)), {"x": x7}),
        "layer_norm": (lambda: T.reduce_sum(T.mul(T.layer_norm(x, gain, bias), ln_weights)), {"x": x, "gain": gain, "bias": bias}),
        "gelu": (lambda: T.reduce_sum(T.gelu(g16)), {"x": g16}),
        "masked_cross_entropy": (lambda: T.masked_cross_entropy(s, 1, mask), {"scores": s}),
    }
    worst = {}
    for name, (build, params) in cases.items():
        worst[name] = max(check_gradients(build, params, step=1e-5).values())
    top = max(worst.values())
    return PropertyResult(name="primitive gradients", passed=top < 1e-6,
                          detail=", ".join(f"{k}={v:.2e}" for k, v in worst.items()))


def check_model_gradients(model_config: ModelConfig, seed: int) -> PropertyResult:
    """Every parameter of a double-precision model against central differences on a 2-way 1-shot episode loss."""
    model = TailModel.initialise(model_config.model_copy(update={"precision": "f64"}), derive_rng(seed, "verify/grad-model"))
    episode = toy_episode(model.config, seed)
    errors = check_gradients(lambda: episode_loss(episode_scores(model, episode), episode), model.params,
                             step=1e-5, floor=1e-6)
    name, worst = max(errors.items(), key=lambda kv: kv[1])
    return PropertyResult(name="whole-model gradient check", passed=worst < GRADIENT_TOLERANCE,
                          detail=f"{len(errors)} tensors, max rel. err {worst:.3e} ({name})")


def gradient_unbiasedness(model: TailModel, episode: Episode, draws: int, seed: int) -> np.ndarray:
    """
    Per dictionary row j: ||mean_all g_j - (K/M) mean_{j selected} g_j|| / ||SE of mean_all g_j||
    over `draws` fresh injections on a frozen episode.
    """
    emb = model.params[EMBEDDINGS]
    M, k = model.dictionary.active_count, episode.way
    total = np.zeros((M,) + emb.shape[1:])
    total_sq = np.zeros_like(total)
    hits = np.zeros(M, dtype=np.int64)
    rng = derive_rng(seed, "verify/unbiased")
    for _ in range(draws):
        ep = episode.model_copy(update={"rho": sample_injection(episode.labels, M, rng)})
        model.zero_grad()
        T.backward(episode_loss(episode_scores(model, ep), ep))
        g = emb.grad[:M]
        total += g
        total_sq += g * g
        hits[list(ep.rho.indices)] += 1
    mean_all = total / draws
    cond = total / np.maximum(hits, 1)[:, None]
    se = np.sqrt(np.maximum(total_sq / draws - mean_all ** 2, 0.0) / draws)
    diff = np.linalg.norm(mean_all - (k / M) * cond, axis=1)
    return diff / np.maximum(np.linalg.norm(se, axis=1), 1e-300)


def check_gradient_unbiasedness(model_config: ModelConfig, draws: int, seed: int) -> PropertyResult:
    model = TailModel.initialise(model_config.model_copy(update={"precision": "f64"}), derive_rng(seed, "verify/unbiased-model"))
    ratios = gradient_unbiasedness(model, toy_episode(model.config, seed, n_shot=2, n_query=2), draws, seed)
    return PropertyResult(name="dictionary gradient unbiasedness (K/M)", passed=bool(np.all(ratios <= 3.0)),
                          detail=f"{draws} injections, max deviation {ratios.max():.2f} SE")


# --------------------------
# Inline queries
# --------------------------
def check_inline_equivalence(model: TailModel, meta: MetaDataset, episodes: int, q: int, seed: int) -> PropertyResult:
    """Inline scores equal per-query scores bitwise; counters and attention accounting match the closed forms."""
    k = 2
    n_query = max(1, q // k)
    mismatches, counter_errors = 0, 0
    for ep in _episodes(model, meta, episodes, seed, "verify/inline", way_values=(k,), n_query=n_query):
        inline, single = ForwardCounter(), ForwardCounter()
        with T.no_grad(), T.exact_reductions():
            a = episode_scores(model, ep, counter=inline).data
            b = episode_scores_per_query(model, ep, counter=single).data
        mismatches += not np.array_equal(a, b)
        layers, n, nq = model.config.n_layers, ep.n, ep.n_query
        counter_errors += (
            inline.fwd_passes != 1 or single.fwd_passes != nq
            or inline.attn_elems != inline_attention_elements(layers, n, nq)
            or single.attn_elems != per_query_attention_elements(layers, n, nq)
        )
    return PropertyResult(name="inline-query equivalence", passed=mismatches == 0 and counter_errors == 0,
                          detail=f"{episodes} episodes, q={k * n_query}, score mismatches={mismatches}, counter errors={counter_errors}")


# --------------------------
# Suite
# --------------------------
def run_property_suite(model: TailModel, meta: MetaDataset, config: VerifyConfig, seed: int) -> List[PropertyResult]:
    logger.info("Running property suite (episodes=%s, seed=%s, causal=%s)", config.episodes, seed, model.config.causal_mask)
    checked = model.astype("f64")
    results = [
        check_order_invariance(checked, meta, config.episodes, config.permutations, seed),
        check_label_equivariance(checked, meta, config.episodes, config.permutations, seed),
        check_feature_equivariance(checked, meta, config.episodes, config.permutations, seed),
        check_classify_shift(seed),
        *check_uniformity(config.uniformity_draws, seed),
        *check_coverage(config.coverage_episodes, seed),
        check_gradient_unbiasedness(config.gradcheck_model, config.unbiasedness_draws, seed),
        check_primitive_gradients(seed),
        check_model_gradients(config.gradcheck_model, seed),
        check_inline_equivalence(checked, meta, config.equivalence_episodes, config.equivalence_queries, seed),
    ]
    for r in results:
        logger.info(r.line())
    return results
