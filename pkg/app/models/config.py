# app/models/config.py
"""
Pydantic configuration schemas.

ExperimentConfig is the JSON document passed with `-c`; every section rejects
unknown keys.
"""
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from app.utiles.logger import get_logger

logger = get_logger(__name__)

Precision = Literal["f32", "f64"]
ProjectionKind = Literal["permutation", "gaussian", "identity"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# -----------------------------
# Model
# -----------------------------
class ModelConfig(_Strict):
    hidden_dim: int = Field(128, gt=0)
    n_layers: int = Field(4, ge=1)
    n_heads: int = Field(4, ge=1)
    mlp_dim: int = Field(256, gt=0)
    d_data: int = Field(64, gt=0, description="Width of the shared feature space")
    d_label: int = Field(32, gt=0)
    M: int = Field(64, ge=1, description="Label-embedding dictionary size")
    causal_mask: bool = False
    projection: ProjectionKind = "permutation"
    precision: Precision = "f32"

    @model_validator(mode="after")
    def heads_divide_hidden(self):
        if self.hidden_dim % self.n_heads:
            logger.error("hidden_dim %s is not divisible by n_heads %s", self.hidden_dim, self.n_heads)
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by n_heads {self.n_heads}")
        return self

    @property
    def token_dim(self) -> int:
        return self.d_data + self.d_label

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        return cls(hidden_dim=1536, n_layers=16, n_heads=16, mlp_dim=3072, d_data=1280, d_label=256, M=100)

    @classmethod
    def toy(cls) -> "ModelConfig":
        """Tiny model used for whole-model finite-difference checks."""
        return cls(hidden_dim=8, n_layers=1, n_heads=2, mlp_dim=16, d_data=6, d_label=4, M=4, precision="f64")


class ScheduleConfig(_Strict):
    """Active dictionary size grows linearly from `start` to M over `warmup` episodes."""
    start: Optional[int] = Field(None, ge=1, description="M0; None disables the schedule (all M active)")
    warmup: int = Field(1000, description="W, episodes until all M embeddings are active")


# -----------------------------
# Tasks
# -----------------------------
class TaskGridConfig(_Strict):
    n_tasks: int = Field(100, ge=1)
    dim_range: Tuple[int, int] = (8, 32)
    classes_range: Tuple[int, int] = (2, 5)
    separation: float = Field(5.0, gt=0, description="Std of each mean coordinate, times sqrt(d)")
    sigma: float = Field(1.0, gt=0)
    seed: int = 0
    split: Literal["train", "val", "test"] = "train"

    @field_validator("dim_range", "classes_range")
    def ordered_range(cls, v):
        lo, hi = v
        if lo < 1 or hi < lo:
            raise ValueError(f"range must satisfy 1 <= lo <= hi, got {v}")
        return v


class FeatureFileConfig(_Strict):
    path: str
    labels: Optional[List[str]] = Field(None, description="Subset of labels forming the task; all by default")
    name: Optional[str] = None


class TaskSourceConfig(_Strict):
    train: TaskGridConfig = Field(default_factory=TaskGridConfig)
    test: TaskGridConfig = Field(default_factory=lambda: TaskGridConfig(n_tasks=20, seed=1, split="test"))
    feature_files: List[FeatureFileConfig] = Field(default_factory=list, description="If set, replaces `test` for eval")


# -----------------------------
# Trainer / evaluation
# -----------------------------
class TrainerConfig(_Strict):
    episodes: int = Field(20000, ge=0)
    shot_values: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    way_values: List[int] = Field(default_factory=lambda: [2, 3, 4, 5])
    n_query: int = Field(5, ge=1, description="Queries per class, N_Q")
    max_lr: float = Field(3e-4, gt=0)
    base_lr: float = Field(0.0, ge=0)
    cycle_length: int = Field(1000, ge=2)
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    loss_reduction: Literal["mean", "sum"] = "mean"
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    validation_every: int = Field(500, ge=0, description="0 disables validation")
    validation_episodes: int = Field(50, ge=1)
    log_every: int = Field(100, ge=1)

    @field_validator("shot_values", "way_values")
    def positive_values(cls, v):
        if not v or any(x < 1 for x in v):
            raise ValueError("value lists must be nonempty and positive")
        return sorted(set(v))

    @classmethod
    def full_scale(cls) -> "TrainerConfig":
        return cls(max_lr=3e-5)


class EvalConfig(_Strict):
    episodes: int = Field(1000, ge=1)
    n_shot: int = Field(5, ge=1)
    k_way: int = Field(5, ge=2)
    n_query: int = Field(10, ge=1)
    k_values: List[int] = Field(default_factory=lambda: [2, 5, 10, 20, 50])
    threads: int = Field(1, ge=1)
    baselines: List[Literal["protohead", "linear-probe"]] = Field(
        default_factory=list, description="Comparators scored on the same episodes by `tail eval`")


class ProbeConfig(_Strict):
    steps: int = Field(100, description="Full-batch gradient steps")
    lr: float = Field(0.5, gt=0)
    weight_decay: float = Field(0.0, ge=0)

    @field_validator("steps")
    def nonnegative_steps(cls, v):
        if v < 0:
            raise ValueError("steps must be >= 0")
        return v


class BenchConfig(_Strict):
    k_values: List[int] = Field(default_factory=lambda: [2, 5, 10, 20])
    n_shot: int = Field(5, ge=1)
    n_query: int = Field(10, ge=1)
    episodes: int = Field(20, ge=1, description="Measured episodes; wall clock is scaled to 1000")


class VerifyConfig(_Strict):
    episodes: int = Field(200, ge=1)
    permutations: int = Field(5, ge=1)
    uniformity_draws: int = Field(100_000, ge=1)
    coverage_episodes: int = Field(4000, ge=1)
    unbiasedness_draws: int = Field(10_000, ge=1)
    equivalence_episodes: int = Field(100, ge=1)
    equivalence_queries: int = Field(16, ge=1)
    gradcheck_model: ModelConfig = Field(default_factory=ModelConfig.toy)


class ExperimentConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    tasks: TaskSourceConfig = Field(default_factory=TaskSourceConfig)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)


class RunConfig(_Strict):
    """One CLI invocation; written next to outputs as the resolved-config snapshot."""
    command: Literal["train", "eval", "extrapolate", "bench", "verify", "serve"]
    config_path: Optional[str] = None
    seed: int = 0
    out_dir: str = "out"
    overrides: List[str] = Field(default_factory=list)
    precision: Optional[Precision] = None
    checkpoint: Optional[str] = None
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
