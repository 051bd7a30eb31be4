# app/cli.py
"""
`tail` command line: train / eval / extrapolate / bench / verify / serve.

Exit codes: 0 ok, 1 config or IO error, 2 incompatibility or divergence,
3 property failure (verify).
"""
import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional

from app.core.config import (
    BASELINES_FILE, BENCH_FILE, CHECKPOINT_ENV, CHECKPOINT_FILE, DEFAULT_SEED, EVAL_EPISODES_FILE, EVAL_SUMMARY_FILE,
    EXTRAPOLATION_FILE, RESOLVED_CONFIG_FILE, TRAIN_LOSS_FILE, VERIFY_FILE,
)
from app.core.errors import DivergedLoss, InvalidConfig, IoFailure
from app.db.checkpoint import load_checkpoint, save_checkpoint
from app.db.feature_store import read_features
from app.db.results import (
    read_json, write_comparison_csv, write_curve_csv, write_episode_csv, write_json, write_train_csv,
    write_verify_report,
)
from app.models.config import ExperimentConfig, RunConfig
from app.models.state import TailModel
from app.models.task import MetaDataset
from app.services.eval_service import efficiency_bench, evaluate, evaluate_baselines, extrapolation_sweep
from app.services.task_service import make_task_grid, task_from_store
from app.services.trainer_service import train
from app.services.verify_service import run_property_suite
from app.utiles.custom_helpers import derive_rng
from app.utiles.decoratores import PROPERTY_FAILURE, exit_code_for, exit_codes
from app.utiles.logger import get_logger

logger = get_logger(__name__)

COMMANDS = ("train", "eval", "extrapolate", "bench", "verify", "serve")


# --------------------------
# Config resolution
# --------------------------
def parse_override(item: str):
    """`a.b.c=value` -> (["a", "b", "c"], value); value parses as JSON, else stays a string."""
    if "=" not in item:
        raise InvalidConfig(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise InvalidConfig(f"override {item!r} has an empty key")
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return path, value


def apply_overrides(document: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    for item in overrides:
        path, value = parse_override(item)
        node = document
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise InvalidConfig(f"override {item!r}: {part} is not a section")
            node = child
        node[path[-1]] = value
    return document


def resolve_experiment(config_path: Optional[str], overrides: List[str], precision: Optional[str] = None,
                       threads: Optional[int] = None) -> ExperimentConfig:
    document: Dict[str, Any] = {}
    if config_path:
        if not os.path.isfile(config_path):
            logger.error("Config file not found: %s", config_path)
            raise IoFailure(f"config file not found: {config_path}")
        document = read_json(config_path)
    document = apply_overrides(document, overrides)
    if precision:
        document.setdefault("model", {})["precision"] = precision
    if threads is not None:
        document.setdefault("eval", {})["threads"] = threads
    return ExperimentConfig.model_validate(document)


def run_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=args.command,
        config_path=args.config,
        seed=args.seed,
        out_dir=args.out,
        overrides=args.set,
        precision=args.precision,
        checkpoint=args.checkpoint,
        experiment=resolve_experiment(args.config, args.set, args.precision, args.threads),
    )


def _out(run: RunConfig, name: str) -> str:
    return os.path.join(run.out_dir, name)


def _snapshot(run: RunConfig) -> None:
    os.makedirs(run.out_dir, exist_ok=True)
    write_json(_out(run, RESOLVED_CONFIG_FILE), run)


def eval_tasks(experiment: ExperimentConfig) -> MetaDataset:
    files = experiment.tasks.feature_files
    if files:
        return MetaDataset.weighted_by_classes([task_from_store(read_features(f.path), f) for f in files], split="test")
    return make_task_grid(experiment.tasks.test)


def _load_model(run: RunConfig) -> TailModel:
    path = run.checkpoint or _out(run, CHECKPOINT_FILE)
    model = load_checkpoint(path).model
    if run.precision and run.precision != model.config.precision:
        model = model.astype(run.precision)
    return model


# --------------------------
# Commands
# --------------------------
@exit_codes
def cmd_train(run: RunConfig) -> int:
    experiment = run.experiment
    _snapshot(run)
    meta = make_task_grid(experiment.tasks.train)
    validation = make_task_grid(experiment.tasks.train.model_copy(update={"split": "val"}))
    state = load_checkpoint(run.checkpoint) if run.checkpoint else None
    try:
        state, records = train(meta, experiment, run.seed, state=state, validation=validation)
    except DivergedLoss as e:
        if e.state is not None:
            save_checkpoint(e.state, _out(run, CHECKPOINT_FILE))
        raise
    save_checkpoint(state, _out(run, CHECKPOINT_FILE))
    write_train_csv(_out(run, TRAIN_LOSS_FILE), records)
    return 0


@exit_codes
def cmd_eval(run: RunConfig) -> int:
    cfg = run.experiment.eval
    _snapshot(run)
    model, tasks = _load_model(run), eval_tasks(run.experiment)
    report = evaluate(model, tasks, cfg.n_shot, cfg.k_way, cfg.episodes, run.seed, cfg.n_query, threads=cfg.threads)
    write_episode_csv(_out(run, EVAL_EPISODES_FILE), report)
    write_curve_csv(_out(run, EVAL_SUMMARY_FILE), [report])
    print(f"accuracy {report.accuracy:.4f} +- {report.ci95:.4f} (K={report.k}, N={report.n_shot}, E={report.episodes})")
    if cfg.baselines:
        baselines = evaluate_baselines(model, tasks, cfg.baselines, cfg.n_shot, cfg.k_way,
                                       cfg.episodes, run.seed, cfg.n_query, run.experiment.probe, cfg.threads)
        write_comparison_csv(_out(run, BASELINES_FILE), baselines)
        for b in baselines:
            print(f"{b.algorithm:<12} accuracy {b.accuracy:.4f} +- {b.ci95:.4f}")
    return 0


@exit_codes
def cmd_extrapolate(run: RunConfig) -> int:
    cfg = run.experiment.eval
    _snapshot(run)
    reports = extrapolation_sweep(_load_model(run), eval_tasks(run.experiment), cfg.k_values, cfg.n_shot,
                                  cfg.episodes, run.seed, cfg.n_query, cfg.threads)
    write_curve_csv(_out(run, EXTRAPOLATION_FILE), reports)
    for r in reports:
        print(f"K={r.k:>3}  accuracy {r.accuracy:.4f} +- {r.ci95:.4f}")
    return 0


@exit_codes
def cmd_bench(run: RunConfig) -> int:
    cfg = run.experiment.bench
    _snapshot(run)
    model, tasks = _load_model(run), eval_tasks(run.experiment)
    rows = []
    for mode in ("inline", "per-query"):
        rows.extend(efficiency_bench(model, tasks, cfg.k_values, cfg.n_shot, cfg.n_query, mode, cfg.episodes, run.seed))
    write_curve_csv(_out(run, BENCH_FILE), rows)
    for r in rows:
        print(f"{r.mode:<9} K={r.k:>3}  {r.wall_ms:10.1f} ms/1000 episodes  passes={r.fwd_passes}  attn={r.attn_elems}")
    return 0


@exit_codes
def cmd_verify(run: RunConfig) -> int:
    experiment = run.experiment
    _snapshot(run)
    if run.checkpoint:
        model = _load_model(run)
    else:
        model = TailModel.initialise(experiment.model, derive_rng(run.seed, "init"))
    results = run_property_suite(model, make_task_grid(experiment.tasks.train), experiment.verify, run.seed)
    for r in results:
        print(r.line())
    write_verify_report(_out(run, VERIFY_FILE), results)
    return 0 if all(r.passed for r in results) else PROPERTY_FAILURE


@exit_codes
def cmd_serve(run: RunConfig, host: str = "127.0.0.1", port: int = 8000) -> int:
    import uvicorn

    if run.checkpoint:
        os.environ[CHECKPOINT_ENV] = run.checkpoint
    uvicorn.run("main:app", host=host, port=port)
    return 0


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "extrapolate": cmd_extrapolate,
    "bench": cmd_bench,
    "verify": cmd_verify,
}


# --------------------------
# Entry point
# --------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tail", description="Algorithm-implicit few-shot meta-learner")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("-c", "--config", help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("-o", "--out", default="out", help="Output directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config key (dotted path); repeatable")
    parser.add_argument("--threads", type=int, help="Evaluation worker threads (overrides eval.threads)")
    parser.add_argument("--precision", choices=("f32", "f64"))
    parser.add_argument("--checkpoint", help="Checkpoint to load (resume for train)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = run_config(args)
    except Exception as e:
        return exit_code_for(e, f"{args.command} (config)")
    if args.command == "serve":
        return cmd_serve(run, args.host, args.port)
    return HANDLERS[args.command](run)


if __name__ == "__main__":
    sys.exit(main())
