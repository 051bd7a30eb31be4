# app/services/eval_service.py
"""
Evaluation harness: episode accuracy with a 95% CI, learning curves against
the analytic Bayes risk, label-space extrapolation and the query-mode
efficiency benchmark.
"""
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import CI_Z
from app.core.errors import InvalidConfig, NotSynthetic, TaskTooSmall
from app.models.config import ProbeConfig, ProjectionKind
from app.models.episode import Episode
from app.models.report import BenchRow, EpisodeResult, EvalReport, LearningCurve, LearningCurvePoint
from app.models.state import TailModel
from app.models.task import MetaDataset, Task
from app.nn.tensor import no_grad
from app.services.baseline_service import linear_probe_fit_predict, protohead_predict
from app.services.episode_service import episode_for_task, sample_task
from app.services.model_service import ForwardCounter, accuracy, check_model_fits, predict
from app.services.task_service import bayes_risk
from app.utiles.custom_helpers import Stopwatch, derive_rng
from app.utiles.logger import get_logger

logger = get_logger(__name__)

Algorithm = Callable[[Episode], List[str]]


# --------------------------
# Helper functions
# --------------------------
def mean_ci(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and normal-approximation half-width 1.96 * sd / sqrt(E)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float(values.mean()) if values.size else 0.0, 0.0
    return float(values.mean()), float(CI_Z * values.std(ddof=1) / np.sqrt(values.size))


def tasks_with_way(meta: MetaDataset, k: int) -> MetaDataset:
    eligible = [t for t in meta.tasks if t.way >= k]
    if not eligible:
        logger.error("TaskTooSmall: no %s task has %s or more labels", meta.split, k)
        raise TaskTooSmall(f"no {meta.split} task has {k} or more labels")
    return MetaDataset.weighted_by_classes(eligible, split=meta.split)


def _episode(meta: MetaDataset, k: int, n_shot: int, n_query: int, seed: int, index: int,
             d_data: int, active_count: int, projection: ProjectionKind, stream: str = "eval") -> Episode:
    rng = derive_rng(seed, stream, index)
    task = sample_task(meta, rng)
    return episode_for_task(task, k, n_shot, n_query, rng, d_data, active_count, projection, episode_seed=index)


def model_algorithm(model: TailModel, mode: str = "inline", counter: Optional[ForwardCounter] = None) -> Algorithm:
    def run(episode: Episode) -> List[str]:
        with no_grad():
            return predict(model, episode, mode=mode, counter=counter)
    run.model = model
    return run


# --------------------------
# Evaluation
# --------------------------
def evaluate_algorithm(
    algorithm_factory: Callable[[], Algorithm],
    meta: MetaDataset,
    n_shot: int,
    k: int,
    episodes: int,
    seed: int,
    n_query: int,
    d_data: int,
    active_count: int,
    projection: ProjectionKind = "permutation",
    threads: int = 1,
    name: str = "tail",
) -> EvalReport:
    """
    Mean per-episode accuracy over `episodes` fresh episodes. Episode e uses
    derive_rng(seed, "eval", e); with threads > 1 each worker builds its own
    algorithm instance and results are merged by episode index.
    """
    meta = tasks_with_way(meta, k)
    clock = Stopwatch()

    def run_chunk(indices: Sequence[int]) -> List[EpisodeResult]:
        algorithm = algorithm_factory()
        out = []
        for e in indices:
            ep = _episode(meta, k, n_shot, n_query, seed, e, d_data, active_count, projection)
            out.append(EpisodeResult(episode=e, task_name=ep.task_name,
                                     accuracy=accuracy(algorithm(ep), ep.query_y), n_query=ep.n_query))
        return out

    with clock.running():
        if threads <= 1:
            results = run_chunk(range(episodes))
        else:
            chunks = [range(w, episodes, threads) for w in range(threads)]
            with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="eval") as pool:
                results = [r for chunk in pool.map(run_chunk, chunks) for r in chunk]
    results.sort(key=lambda r: r.episode)

    mean, ci = mean_ci([r.accuracy for r in results])
    logger.info("evaluate[%s] K=%s N=%s E=%s -> %.4f +- %.4f", name, k, n_shot, episodes, mean, ci)
    return EvalReport(
        task_names=tuple(sorted({r.task_name for r in results})),
        k=k, n_shot=n_shot, episodes=episodes,
        accuracy=min(max(mean, 0.0), 1.0), ci95=ci,
        wall_ms=clock.elapsed_ms, algorithm=name, per_episode=results,
    )


def evaluate(model: TailModel, meta: MetaDataset, n_shot: int, k: int, episodes: int = 1000, seed: int = 0,
             n_query: int = 10, threads: int = 1, mode: str = "inline") -> EvalReport:
    """TAIL accuracy with fresh pi and rho per episode."""
    check_model_fits(model, max(t.feature_dim for t in meta.tasks), k)
    counters: List[ForwardCounter] = []

    def factory() -> Algorithm:
        counter = ForwardCounter()
        counters.append(counter)
        return model_algorithm(model.snapshot() if threads > 1 else model, mode, counter)

    report = evaluate_algorithm(factory, meta, n_shot, k, episodes, seed, n_query, model.config.d_data,
                                model.dictionary.active_count, model.config.projection, threads)
    passes = sum(c.fwd_passes for c in counters)
    elems = sum(c.attn_elems for c in counters)
    return report.model_copy(update={"fwd_passes": passes // episodes, "attn_elems": elems // episodes})


# --------------------------
# Learning curves
# --------------------------
def learning_curve(
    algorithm: Algorithm,
    task: Task,
    n_values: Sequence[int],
    replications: int,
    seed: int = 0,
    n_query: int = 10,
    d_data: Optional[int] = None,
    active_count: Optional[int] = None,
    name: str = "algorithm",
    bayes_samples: int = 200_000,
) -> LearningCurve:
    """
    Excess 0-1 risk over R* for each shot count N (support size n = N*K),
    with a validity verdict: each step may rise by at most 2 combined SE.
    """
    if not task.is_synthetic:
        logger.error("NotSynthetic: learning curves need a synthetic task (%s)", task.name)
        raise NotSynthetic(f"learning curves need a synthetic task; {task.name} is file-backed")
    if active_count is None and getattr(algorithm, "model", None) is not None:
        logger.error("InvalidConfig: learning_curve on a model needs its active_count")
        raise InvalidConfig("learning_curve on a model needs active_count (the dictionary rows rho may draw from)")
    k = task.way
    d_data = d_data or task.feature_dim
    active_count = active_count or k
    r_star = bayes_risk(task, samples=bayes_samples, seed=seed).risk

    points: List[LearningCurvePoint] = []
    for n_shot in sorted(set(n_values)):
        risks = []
        for r in range(replications):
            ep = episode_for_task(task, k, n_shot, n_query, derive_rng(seed, f"curve/{n_shot}", r),
                                  d_data, active_count, episode_seed=r)
            risks.append(1.0 - accuracy(algorithm(ep), ep.query_y))
        risks = np.asarray(risks)
        se = float(risks.std(ddof=1) / np.sqrt(replications)) if replications > 1 else 0.0
        points.append(LearningCurvePoint(n=n_shot * k, n_shot=n_shot, excess_risk=float(risks.mean() - r_star), std_error=se))

    valid = all(
        b.excess_risk <= a.excess_risk + 2.0 * np.hypot(a.std_error, b.std_error)
        for a, b in zip(points, points[1:])
    )
    verdict = "consistent with valid" if valid else "not consistent with valid"
    logger.info("learning_curve[%s] on %s: %s", name, task.name, verdict)
    return LearningCurve(algorithm=name, task_name=task.name, bayes_risk=r_star, points=points, verdict=verdict)


# --------------------------
# Extrapolation / efficiency
# --------------------------
def extrapolation_sweep(model: TailModel, meta: MetaDataset, k_values: Sequence[int], n_shot: int,
                        episodes: int, seed: int, n_query: int = 10, threads: int = 1) -> List[EvalReport]:
    """One report per K; each K reuses the evaluation seed so K = K_train matches `evaluate`."""
    return [evaluate(model, meta, n_shot, k, episodes, seed, n_query, threads) for k in k_values]


def efficiency_bench(model: TailModel, meta: MetaDataset, k_values: Sequence[int], n_shot: int, n_query: int,
                     mode: str, episodes: int = 20, seed: int = 0) -> List[BenchRow]:
    """
    Forward passes, dense-equivalent attention elements (per episode) and wall
    clock scaled to 1000 episodes, excluding any encoder cost.
    """
    rows = []
    for k in k_values:
        report = evaluate(model, meta, n_shot, k, episodes, seed, n_query, threads=1, mode=mode)
        rows.append(BenchRow(
            mode=mode, k=k, n_shot=n_shot, n_query=n_query * k,
            accuracy=report.accuracy, ci95=report.ci95,
            wall_ms=report.wall_ms * 1000.0 / episodes,
            fwd_passes=report.fwd_passes, attn_elems=report.attn_elems,
        ))
        logger.info("bench[%s] K=%s: %.1f ms/1000 episodes, %s passes, %s attention elements",
                    mode, k, rows[-1].wall_ms, report.fwd_passes, report.attn_elems)
    return rows


# --------------------------
# Baselines
# --------------------------
def baseline_algorithm(name: str, probe: Optional[ProbeConfig] = None) -> Algorithm:
    if name == "protohead":
        return protohead_predict
    if name == "linear-probe":
        return partial(linear_probe_fit_predict, config=probe or ProbeConfig())
    logger.error("InvalidConfig: unknown baseline %r", name)
    raise InvalidConfig(f"unknown baseline {name!r}")


def evaluate_baselines(model: TailModel, meta: MetaDataset, names: Sequence[str], n_shot: int, k: int,
                       episodes: int, seed: int, n_query: int = 10, probe: Optional[ProbeConfig] = None,
                       threads: int = 1) -> List[EvalReport]:
    """Comparators scored on exactly the episodes `evaluate` draws for `model` with the same seed."""
    return [
        evaluate_algorithm(partial(baseline_algorithm, name, probe), meta, n_shot, k, episodes, seed, n_query,
                           model.config.d_data, model.dictionary.active_count, model.config.projection,
                           threads, name=name)
        for name in names
    ]
