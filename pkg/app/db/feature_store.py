# app/db/feature_store.py
"""
Feature-matrix files.

Binary (little-endian): b"TAILFM01" | u32 rows | u32 d_T | u32 label count |
labels as (u32 byte length, UTF-8 bytes) | rows as (u32 label index, d_T x f32).

CSV: header `label,f0,f1,...`, one row per sample.
"""
import csv
import struct
from typing import Sequence

import numpy as np

from app.core.config import FEATURE_MAGIC
from app.core.errors import FormatVersionMismatch, IoFailure, LengthMismatch
from app.models.task import FeatureStore
from app.utiles.logger import get_logger

logger = get_logger(__name__)

_HEADER = struct.Struct("<8sIII")
_LENGTH = struct.Struct("<I")


def _row_dtype(d: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("x", "<f4", (d,))])


def _label_table(row_labels: Sequence[str]):
    names = tuple(dict.fromkeys(row_labels))
    position = {name: i for i, name in enumerate(names)}
    return names, np.array([position[label] for label in row_labels], dtype=np.int64)


# --------------------------
# Binary
# --------------------------
def write_feature_matrix(path: str, features: np.ndarray, row_labels: Sequence[str]) -> None:
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[0] != len(row_labels):
        raise LengthMismatch("features must be (rows, d) with one label per row")
    names, index = _label_table(row_labels)
    rows = np.empty(features.shape[0], dtype=_row_dtype(features.shape[1]))
    rows["label"] = index
    rows["x"] = features
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(FEATURE_MAGIC, features.shape[0], features.shape[1], len(names)))
            for name in names:
                raw = name.encode("utf-8")
                fh.write(_LENGTH.pack(len(raw)) + raw)
            fh.write(rows.tobytes())
    except OSError as e:
        logger.exception("Failed to write feature matrix %s", path)
        raise IoFailure(f"cannot write feature matrix {path}: {e}") from e
    logger.info("Feature matrix written: %s (%s rows, d=%s, %s labels)", path, features.shape[0], features.shape[1], len(names))


def read_feature_matrix(path: str) -> FeatureStore:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        logger.error("Failed to read feature matrix %s: %s", path, e)
        raise IoFailure(f"cannot read feature matrix {path}: {e}") from e

    if len(blob) < _HEADER.size:
        raise IoFailure(f"{path} is too short to be a feature matrix")
    magic, n_rows, d, n_labels = _HEADER.unpack_from(blob, 0)
    if magic != FEATURE_MAGIC:
        raise FormatVersionMismatch(f"{path} is not a feature matrix (magic {magic!r})")

    offset = _HEADER.size
    names = []
    try:
        for _ in range(n_labels):
            (length,) = _LENGTH.unpack_from(blob, offset)
            offset += _LENGTH.size
            names.append(blob[offset:offset + length].decode("utf-8"))
            offset += length
        rows = np.frombuffer(blob, dtype=_row_dtype(d), count=n_rows, offset=offset)
    except (struct.error, ValueError) as e:
        raise IoFailure(f"{path} is truncated or corrupt: {e}") from e
    if rows.size and int(rows["label"].max()) >= n_labels:
        raise IoFailure(f"{path} has a row label index outside its label table")
    return FeatureStore(path=path, features=rows["x"].astype(np.float32), row_labels=rows["label"].astype(np.int64),
                        label_names=tuple(names))


# --------------------------
# CSV
# --------------------------
def write_feature_csv(path: str, features: np.ndarray, row_labels: Sequence[str]) -> None:
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[0] != len(row_labels):
        raise LengthMismatch("features must be (rows, d) with one label per row")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label"] + [f"f{j}" for j in range(features.shape[1])])
            for label, row in zip(row_labels, features):
                writer.writerow([label] + [repr(float(v)) for v in row])
    except OSError as e:
        raise IoFailure(f"cannot write feature csv {path}: {e}") from e


def read_feature_csv(path: str) -> FeatureStore:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            records = [r for r in reader if r]
    except OSError as e:
        logger.error("Failed to read feature csv %s: %s", path, e)
        raise IoFailure(f"cannot read feature csv {path}: {e}") from e
    if not header or header[0] != "label":
        raise IoFailure(f"{path} must start with a `label,f0,f1,...` header")
    d = len(header) - 1
    if any(len(r) != d + 1 for r in records):
        raise LengthMismatch(f"every row of {path} needs {d} feature columns")
    names, index = _label_table([r[0] for r in records])
    features = np.array([[float(v) for v in r[1:]] for r in records], dtype=np.float32).reshape(len(records), d)
    return FeatureStore(path=path, features=features, row_labels=index, label_names=names)


def read_features(path: str) -> FeatureStore:
    """Dispatch on extension: `.csv` is CSV, anything else the binary format."""
    return read_feature_csv(path) if path.lower().endswith(".csv") else read_feature_matrix(path)
