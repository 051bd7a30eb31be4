import time
import zlib
from contextlib import contextmanager
from typing import Iterator, List

import numpy as np

# ----------------------------
# Helpers
# ----------------------------
def stream_id(name: str) -> int:
    """Stable 32-bit id for a named randomness stream (crc32; Python's hash() is salted per process)."""
    return zlib.crc32(name.encode("utf-8"))


def derive_rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """
    Sub-seed splitting rule used everywhere: (seed, stream-name hash, index) -> Generator.
    Episode e of evaluation is derive_rng(seed, "eval", e), training episode t is
    derive_rng(seed, "train", t), and so on.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream_id(stream), int(index)]))


def partial_fisher_yates(k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Uniform ordered draw of k distinct integers from [0, n).

    Every one of the n!/(n-k)! injections [k] -> [n] is equally likely.
    """
    pool = np.arange(n, dtype=np.int64)
    for i in range(k):
        j = int(rng.integers(i, n))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k].copy()


def uniform_choice(values: List[int], rng: np.random.Generator) -> int:
    return int(values[int(rng.integers(0, len(values)))])


class Stopwatch:
    """Accumulating wall clock in milliseconds."""

    def __init__(self) -> None:
        self.elapsed_ms = 0.0

    @contextmanager
    def running(self) -> Iterator["Stopwatch"]:
        start = time.perf_counter()
        try:
            yield self
        finally:
            self.elapsed_ms += (time.perf_counter() - start) * 1000.0
