# app/models/report.py
"""Result records written by the evaluation harness, the trainer and the property suite."""
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator


class BayesRisk(BaseModel):
    risk: float = Field(..., ge=0.0, le=1.0)
    std_error: float = Field(0.0, ge=0.0)
    samples: int = 0


class EpisodeResult(BaseModel):
    episode: int
    task_name: str
    accuracy: float = Field(..., ge=0.0, le=1.0)
    n_query: int


class EvalReport(BaseModel):
    """Mean per-episode accuracy with a normal-approximation 95% CI half-width."""
    task_names: Tuple[str, ...] = ()
    k: int
    n_shot: int
    episodes: int
    accuracy: float = Field(..., ge=0.0, le=1.0)
    ci95: float = Field(..., ge=0.0)
    wall_ms: float = 0.0
    fwd_passes: int = 0
    attn_elems: int = 0
    algorithm: str = "tail"
    per_episode: List[EpisodeResult] = Field(default_factory=list)

    def curve_row(self) -> dict:
        return {
            "k": self.k,
            "n_shot": self.n_shot,
            "accuracy": self.accuracy,
            "ci95": self.ci95,
            "wall_ms": self.wall_ms,
            "fwd_passes": self.fwd_passes,
            "attn_elems": self.attn_elems,
        }


class LearningCurvePoint(BaseModel):
    n: int = Field(..., ge=1, description="Support size N*K")
    n_shot: int
    excess_risk: float
    std_error: float = Field(..., ge=0.0)


class LearningCurve(BaseModel):
    algorithm: str
    task_name: str
    bayes_risk: float
    points: List[LearningCurvePoint]
    verdict: Literal["consistent with valid", "not consistent with valid"]

    @model_validator(mode="after")
    def increasing_n(self):
        ns = [p.n for p in self.points]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("learning-curve support sizes must be strictly increasing")
        return self


class BenchRow(BaseModel):
    mode: Literal["inline", "per-query"]
    k: int
    n_shot: int
    n_query: int
    accuracy: float = 0.0
    ci95: float = 0.0
    wall_ms: float = Field(..., description="Wall clock scaled to 1000 episodes")
    fwd_passes: int = Field(..., description="Forward passes per episode")
    attn_elems: int = Field(..., description="Attention score elements per episode")

    def curve_row(self) -> dict:
        return {
            "k": self.k,
            "n_shot": self.n_shot,
            "accuracy": self.accuracy,
            "ci95": self.ci95,
            "wall_ms": self.wall_ms,
            "fwd_passes": self.fwd_passes,
            "attn_elems": self.attn_elems,
        }


class PropertyResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


class TrainRecord(BaseModel):
    episode: int
    loss: float
    lr: float
    active_count: int
    val_loss: Optional[float] = None
