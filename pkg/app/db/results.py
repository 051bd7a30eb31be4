# app/db/results.py
"""CSV/JSON result files written next to a run's outputs."""
import csv
import json
import os
from typing import Iterable, List, Sequence

from pydantic import BaseModel

from app.core.config import CURVE_COLUMNS
from app.core.errors import IoFailure
from app.models.report import EvalReport, PropertyResult, TrainRecord
from app.utiles.logger import get_logger

logger = get_logger(__name__)


def _write_rows(path: str, columns: Sequence[str], rows: Iterable[dict]) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(columns))
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    except OSError as e:
        logger.exception("Failed to write %s", path)
        raise IoFailure(f"cannot write {path}: {e}") from e
    logger.info("Wrote %s", path)


def write_curve_csv(path: str, rows: Iterable[BaseModel]) -> None:
    """Columns k, n_shot, accuracy, ci95, wall_ms, fwd_passes, attn_elems; optional `mode` first for bench rows."""
    rows = list(rows)
    has_mode = any(hasattr(r, "mode") for r in rows)
    columns = (("mode",) if has_mode else ()) + CURVE_COLUMNS
    _write_rows(path, columns, (({"mode": r.mode} if has_mode else {}) | r.curve_row() for r in rows))


def write_comparison_csv(path: str, reports: Iterable[EvalReport]) -> None:
    """Curve columns prefixed by the algorithm name, one row per report."""
    _write_rows(path, ("algorithm",) + CURVE_COLUMNS, ({"algorithm": r.algorithm} | r.curve_row() for r in reports))


def write_episode_csv(path: str, report: EvalReport) -> None:
    _write_rows(path, ("episode", "task", "accuracy", "n_query"),
                ({"episode": r.episode, "task": r.task_name, "accuracy": r.accuracy, "n_query": r.n_query}
                 for r in report.per_episode))


def write_train_csv(path: str, records: List[TrainRecord]) -> None:
    _write_rows(path, ("episode", "loss", "lr", "active_count", "val_loss"),
                (r.model_dump() for r in records))


def write_json(path: str, payload: BaseModel) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload.model_dump_json(indent=2))
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def write_verify_report(path: str, results: List[PropertyResult]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(r.line() for r in results) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        logger.error("Cannot read %s: %s", path, e)
        raise IoFailure(f"cannot read config file {path}: {e}") from e
