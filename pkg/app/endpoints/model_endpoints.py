# app/endpoints/model_endpoints.py

from fastapi import APIRouter

from app.db.model_store import get_model, model_path
from app.models.api import EvaluateRequest, ModelSummary, PredictRequest, PredictResponse
from app.models.report import EvalReport
from app.services.eval_service import evaluate
from app.services.model_service import predict_raw
from app.services.task_service import make_task_grid
from app.utiles.custom_helpers import derive_rng
from app.utiles.decoratores import handle_exceptions
from app.utiles.logger import get_logger

# Initialize router
router = APIRouter(tags=["TAIL Inference"])

# Logger instance for this module
logger = get_logger(__name__)

# ======================================================
# Model Routes
# Serves the checkpoint loaded at startup
# ======================================================


# ---------------- Model summary ----------------
@router.get("/model", response_model=ModelSummary)
@handle_exceptions
def model_summary():
    """
    Endpoint: Describe the served model.
    Reads the registry → app.db.model_store.
    """
    state = get_model()
    logger.info("API Request → Model summary")
    return ModelSummary(
        path=model_path(),
        config=state.model.config,
        episodes_trained=state.episode,
        active_count=state.model.dictionary.active_count,
        parameters=sum(p.data.size for p in state.model.parameters()),
    )


# ---------------- Predict ----------------
@router.post("/predict", response_model=PredictResponse)
@handle_exceptions
def predict_endpoint(payload: PredictRequest):
    """
    Endpoint: Predict query labels from a labelled support set.
    Calls service layer → predict_raw.
    """
    logger.info("API Request → Predict: %s support rows, %s queries", len(payload.support_x), len(payload.query_x))
    state = get_model()
    predictions = predict_raw(state.model, payload.support_x, payload.support_y, payload.query_x,
                              derive_rng(payload.seed, "api/predict"))
    logger.info("API Response → %s predictions", len(predictions))
    return PredictResponse(predictions=predictions)


# ---------------- Evaluate ----------------
@router.post("/evaluate", response_model=EvalReport)
@handle_exceptions
def evaluate_endpoint(payload: EvaluateRequest):
    """
    Endpoint: Evaluate the served model on freshly generated synthetic tasks.
    Calls service layer → evaluate.
    """
    logger.info("API Request → Evaluate: K=%s N=%s episodes=%s", payload.k_way, payload.n_shot, payload.episodes)
    state = get_model()
    report = evaluate(state.model, make_task_grid(payload.tasks), payload.n_shot, payload.k_way,
                      payload.episodes, payload.seed, payload.n_query, mode=payload.mode)
    logger.info("API Response → accuracy %.4f", report.accuracy)
    return report
