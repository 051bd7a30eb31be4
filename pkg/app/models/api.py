# app/models/api.py
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from app.models.config import ModelConfig, TaskGridConfig


class ModelSummary(BaseModel):
    path: Optional[str] = None
    config: ModelConfig
    episodes_trained: int
    active_count: int
    parameters: int


class PredictRequest(BaseModel):
    support_x: List[List[float]] = Field(..., description="Support feature rows (n, d_T)")
    support_y: List[str] = Field(..., description="One label per support row")
    query_x: List[List[float]] = Field(..., description="Query feature rows (q, d_T)")
    seed: int = Field(0, description="Seed for the episode's projection and label injection")

    @field_validator("support_x", "query_x")
    def nonempty_rows(cls, v):
        if not v or not v[0]:
            raise ValueError("at least one nonempty feature row is required")
        if any(len(row) != len(v[0]) for row in v):
            raise ValueError("all feature rows must have the same length")
        return v


class PredictResponse(BaseModel):
    predictions: List[str]


class EvaluateRequest(BaseModel):
    tasks: TaskGridConfig = Field(default_factory=lambda: TaskGridConfig(n_tasks=10, seed=1, split="test"))
    n_shot: int = Field(5, ge=1)
    k_way: int = Field(5, ge=2)
    n_query: int = Field(10, ge=1)
    episodes: int = Field(100, ge=1, le=10_000)
    seed: int = 0
    mode: Literal["inline", "per-query"] = "inline"
