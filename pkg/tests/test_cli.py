import csv
import json
import logging

import numpy as np
import pytest

from app import cli
from app.cli import apply_overrides, main, parse_override
from app.core.config import CURVE_COLUMNS
from app.db.checkpoint import load_checkpoint
from app.models.config import ExperimentConfig
from app.nn import tensor as T
from app.services import trainer_service
from app.services.trainer_service import init_state

CONFIG = {
    "model": {"hidden_dim": 16, "n_layers": 2, "n_heads": 2, "mlp_dim": 32, "d_data": 12, "d_label": 8, "M": 8,
              "precision": "f64"},
    "tasks": {
        "train": {"n_tasks": 4, "dim_range": [3, 8], "classes_range": [3, 4]},
        "test": {"n_tasks": 4, "dim_range": [3, 8], "classes_range": [3, 4], "seed": 1, "split": "test"},
    },
    "trainer": {"episodes": 4, "shot_values": [1, 2], "way_values": [2, 3], "n_query": 2,
                "validation_every": 2, "validation_episodes": 2, "log_every": 1},
    "eval": {"episodes": 5, "n_shot": 1, "k_way": 2, "n_query": 2, "k_values": [2, 3]},
    "bench": {"k_values": [2], "n_shot": 1, "n_query": 2, "episodes": 2},
    "verify": {"episodes": 3, "permutations": 2, "uniformity_draws": 1200, "coverage_episodes": 400,
               "unbiasedness_draws": 50, "equivalence_episodes": 2, "equivalence_queries": 4},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIG))
    return str(path)


@pytest.fixture
def trained(config_file, tmp_path):
    out = tmp_path / "out"
    assert main(["train", "-c", config_file, "--seed", "7", "-o", str(out)]) == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_override():
    assert parse_override("trainer.episodes=0") == (["trainer", "episodes"], 0)
    assert parse_override("model.projection=gaussian") == (["model", "projection"], "gaussian")
    assert parse_override("eval.k_values=[2,5]") == (["eval", "k_values"], [2, 5])
    doc = apply_overrides({"trainer": {"episodes": 5}}, ["trainer.episodes=1", "model.M=16"])
    assert doc == {"trainer": {"episodes": 1}, "model": {"M": 16}}


def test_train_writes_outputs(trained):
    assert (trained / "model.tailck").exists()
    assert len(_rows(trained / "train_loss.csv")) == 4
    snapshot = json.loads((trained / "resolved_config.json").read_text())
    assert snapshot["command"] == "train" and snapshot["seed"] == 7
    assert ExperimentConfig.model_validate(snapshot["experiment"]).trainer.episodes == 4
    assert load_checkpoint(str(trained / "model.tailck")).episode == 4


def test_train_zero_episodes_saves_initialisation(config_file, tmp_path):
    out = tmp_path / "zero"
    assert main(["train", "-c", config_file, "--seed", "3", "-o", str(out), "--set", "trainer.episodes=0"]) == 0
    saved = load_checkpoint(str(out / "model.tailck"))
    experiment = ExperimentConfig.model_validate(CONFIG)
    fresh = init_state(experiment.model, experiment.trainer, seed=3)
    assert all(np.array_equal(saved.model.params[n].data, p.data) for n, p in fresh.model.params.items())


def test_missing_config_exits_1(tmp_path, capsys):
    missing = str(tmp_path / "nowhere.json")
    assert main(["train", "-c", missing, "-o", str(tmp_path)]) == 1
    assert missing in capsys.readouterr().err


def test_unknown_key_exits_1(config_file, tmp_path):
    assert main(["train", "-c", config_file, "-o", str(tmp_path), "--set", "trainer.bogus=1"]) == 1


def test_divergence_exits_2_and_keeps_state(config_file, tmp_path, monkeypatch):
    monkeypatch.setattr(trainer_service, "episode_loss", lambda scores, episode, reduction: T.Tensor(np.array(np.inf)))
    assert main(["train", "-c", config_file, "-o", str(tmp_path)]) == 2
    assert (tmp_path / "model.tailck").exists()


def test_eval_outputs(config_file, trained):
    assert main(["eval", "-c", config_file, "-o", str(trained), "--checkpoint", str(trained / "model.tailck")]) == 0
    assert len(_rows(trained / "eval_episodes.csv")) == 5
    summary = _rows(trained / "eval_summary.csv")
    assert len(summary) == 1 and tuple(summary[0]) == CURVE_COLUMNS
    assert summary[0]["fwd_passes"] == "1"


def test_eval_reads_default_checkpoint_and_precision(config_file, trained):
    assert main(["eval", "-c", config_file, "-o", str(trained), "--precision", "f32", "--threads", "2"]) == 0


def test_extrapolate_and_bench(config_file, trained):
    assert main(["extrapolate", "-c", config_file, "-o", str(trained)]) == 0
    assert [r["k"] for r in _rows(trained / "extrapolation.csv")] == ["2", "3"]
    assert main(["bench", "-c", config_file, "-o", str(trained)]) == 0
    bench = {r["mode"]: r for r in _rows(trained / "bench.csv")}
    assert bench["inline"]["fwd_passes"] == "1"
    assert bench["per-query"]["fwd_passes"] == "4"


def test_dimension_mismatch_exits_2(config_file, trained):
    code = main(["eval", "-c", config_file, "-o", str(trained), "--set", "tasks.test.dim_range=[20,20]"])
    assert code == 2


def test_eval_without_checkpoint_exits_1(config_file, tmp_path):
    assert main(["eval", "-c", config_file, "-o", str(tmp_path / "empty")]) == 1


def test_verify_reports_causal_failure(config_file, tmp_path, capsys):
    code = main(["verify", "-c", config_file, "-o", str(tmp_path), "--set", "model.causal_mask=true"])
    out = capsys.readouterr().out
    assert code == 3
    assert "FAIL order invariance" in out
    assert (tmp_path / "verify.txt").read_text().count("\n") == len(out.strip().splitlines())


def test_eval_threads_come_from_the_config(config_file, trained, monkeypatch):
    seen = []
    real = cli.evaluate

    def recording(*args, **kwargs):
        seen.append(kwargs["threads"])
        return real(*args, **kwargs)

    monkeypatch.setattr(cli, "evaluate", recording)
    assert main(["eval", "-c", config_file, "-o", str(trained), "--set", "eval.threads=3"]) == 0
    assert main(["eval", "-c", config_file, "-o", str(trained), "--set", "eval.threads=3", "--threads", "2"]) == 0
    assert seen == [3, 2]
    snapshot = json.loads((trained / "resolved_config.json").read_text())
    assert snapshot["experiment"]["eval"]["threads"] == 2


def test_eval_scores_baselines_on_the_same_episodes(config_file, trained):
    code = main(["eval", "-c", config_file, "-o", str(trained),
                 "--set", 'eval.baselines=["protohead","linear-probe"]', "--set", "probe.steps=0"])
    assert code == 0
    rows = _rows(trained / "eval_baselines.csv")
    assert [r["algorithm"] for r in rows] == ["protohead", "linear-probe"]
    # a linear probe with zero steps always answers the first label: exactly half of a balanced 2-way query set
    assert float(rows[1]["accuracy"]) == 0.5
    assert main(["eval", "-c", config_file, "-o", str(trained), "--set", 'eval.baselines=["knn"]']) == 1


def test_config_resolution_is_not_reported_as_a_command(config_file, tmp_path, caplog):
    caplog.set_level(logging.INFO, logger="app.utiles.decoratores")
    assert main(["eval", "-c", config_file, "-o", str(tmp_path / "empty")]) == 1
    messages = [r.getMessage() for r in caplog.records]
    assert any("cmd_eval" in m for m in messages)
    assert not any("RunConfig" in m for m in messages)
