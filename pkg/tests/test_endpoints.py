import pytest
from fastapi.testclient import TestClient

from app.db.model_store import set_model, unload_model
from app.models.config import TrainerConfig
from app.services.trainer_service import init_state
from main import app

client = TestClient(app)


@pytest.fixture
def served(small_config):
    state = init_state(small_config, TrainerConfig(), seed=0)
    set_model(state, "memory")
    yield state
    unload_model()


def test_root():
    response = client.get("/")
    assert response.status_code == 200
    assert response.json() == {"message": "tail-meta API running"}


def test_model_summary(served):
    response = client.get("/api/tail/model")
    assert response.status_code == 200
    body = response.json()
    assert body["path"] == "memory"
    assert body["config"]["M"] == 8 and body["active_count"] == 8
    assert body["parameters"] == sum(p.data.size for p in served.model.parameters())


def test_no_model_is_404():
    unload_model()
    assert client.get("/api/tail/model").status_code == 404


def test_predict(served):
    payload = {
        "support_x": [[0.0, 0.1], [0.1, 0.0], [5.0, 5.1], [5.1, 5.0]],
        "support_y": ["lo", "lo", "hi", "hi"],
        "query_x": [[0.05, 0.05], [5.05, 5.05], [4.9, 5.2]],
        "seed": 3,
    }
    response = client.post("/api/tail/predict", json=payload)
    assert response.status_code == 200
    predictions = response.json()["predictions"]
    assert len(predictions) == 3 and set(predictions) <= {"lo", "hi"}


def test_predict_validation_errors(served):
    ragged = {"support_x": [[0.0, 1.0], [1.0]], "support_y": ["a", "b"], "query_x": [[0.0, 0.0]]}
    assert client.post("/api/tail/predict", json=ragged).status_code == 422
    short = {"support_x": [[0.0, 1.0], [1.0, 0.0]], "support_y": ["a"], "query_x": [[0.0, 0.0]]}
    assert client.post("/api/tail/predict", json=short).status_code == 400


def test_predict_too_many_labels_is_409(served):
    payload = {
        "support_x": [[float(i), 0.0] for i in range(9)],
        "support_y": [f"c{i}" for i in range(9)],
        "query_x": [[0.0, 0.0]],
    }
    assert client.post("/api/tail/predict", json=payload).status_code == 409


def test_evaluate(served):
    payload = {
        "tasks": {"n_tasks": 3, "dim_range": [3, 6], "classes_range": [2, 3], "seed": 5, "split": "test"},
        "n_shot": 1, "k_way": 2, "n_query": 2, "episodes": 3, "mode": "per-query",
    }
    response = client.post("/api/tail/evaluate", json=payload)
    assert response.status_code == 200
    report = response.json()
    assert report["episodes"] == 3 and len(report["per_episode"]) == 3
    assert 0.0 <= report["accuracy"] <= 1.0
    assert report["fwd_passes"] == 4
