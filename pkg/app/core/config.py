# app/core/config.py
# Logging
LOG_LEVEL_ENV = "TAIL_LOG"
LOG_FILE_ENV = "TAIL_LOG_FILE"
DEFAULT_LOG_FILE = "tail_meta.log"

# HTTP service: checkpoint loaded at startup
CHECKPOINT_ENV = "TAIL_CHECKPOINT"

# Output file names
CHECKPOINT_FILE = "model.tailck"
TRAIN_LOSS_FILE = "train_loss.csv"
RESOLVED_CONFIG_FILE = "resolved_config.json"
EVAL_EPISODES_FILE = "eval_episodes.csv"
EVAL_SUMMARY_FILE = "eval_summary.csv"
EXTRAPOLATION_FILE = "extrapolation.csv"
BASELINES_FILE = "eval_baselines.csv"
BENCH_FILE = "bench.csv"
VERIFY_FILE = "verify.txt"

# Curve CSV schema (eval / extrapolate / bench)
CURVE_COLUMNS = ("k", "n_shot", "accuracy", "ci95", "wall_ms", "fwd_passes", "attn_elems")

# Binary formats
FEATURE_MAGIC = b"TAILFM01"
CHECKPOINT_MAGIC = b"TAILCK01"
CHECKPOINT_VERSION = 1

# Numerics
LAYER_NORM_EPS = 1e-5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CI_Z = 1.96

# Seeds
DEFAULT_SEED = 0
