# main.py (project root)
from fastapi import FastAPI
import uvicorn
from app.core.config import CHECKPOINT_ENV
from app.db.model_store import load_model, unload_model
from app.endpoints import model_endpoints
from app.utiles.logger import get_logger
import os

logger = get_logger(__name__)

app = FastAPI(title="tail-meta - few-shot inference")


app.include_router(model_endpoints.router, prefix="/api/tail", tags=["TAIL"])


@app.on_event("startup")
async def startup():
    path = os.getenv(CHECKPOINT_ENV)
    if path:
        load_model(path)
    else:
        logger.warning("⚠️ %s not set; /api/tail routes answer 404 until a model is loaded", CHECKPOINT_ENV)


@app.on_event("shutdown")
async def shutdown():
    unload_model()


@app.get("/")
async def root():
    return {"message": "tail-meta API running"}


if __name__ == "__main__":
    uvicorn.run(app, host="0.0.0.0", port=8000)
