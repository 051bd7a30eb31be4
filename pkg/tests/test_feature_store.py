import numpy as np
import pytest

from app.core.errors import FormatVersionMismatch, IoFailure, LengthMismatch
from app.db.feature_store import read_features, write_feature_csv, write_feature_matrix
from app.models.config import FeatureFileConfig
from app.services.task_service import task_from_store


@pytest.fixture
def rows():
    features = np.random.default_rng(0).standard_normal((7, 3)).astype(np.float32)
    labels = ["ant", "bee", "ant", "cow", "bee", "ant", "cow"]
    return features, labels


def _check(store, features, labels):
    assert store.label_names == ("ant", "bee", "cow")
    assert np.array_equal(store.features, features)
    assert [store.label_names[i] for i in store.row_labels] == labels
    assert list(store.index["ant"]) == [0, 2, 5]


def test_binary_roundtrip(rows, tmp_path):
    path = str(tmp_path / "feats.tailfm")
    write_feature_matrix(path, *rows)
    store = read_features(path)
    _check(store, *rows)
    assert store.dim == 3


def test_csv_roundtrip(rows, tmp_path):
    path = str(tmp_path / "feats.csv")
    write_feature_csv(path, *rows)
    _check(read_features(path), *rows)


def test_store_becomes_a_task(rows, tmp_path):
    path = str(tmp_path / "feats.tailfm")
    write_feature_matrix(path, *rows)
    task = task_from_store(read_features(path), FeatureFileConfig(path=path, labels=["bee", "cow"], name="farm"))
    assert task.name == "farm" and task.labels == ("bee", "cow") and task.feature_dim == 3
    assert not task.is_synthetic


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTFEATS" + bytes(12))
    with pytest.raises(FormatVersionMismatch):
        read_features(str(path))


def test_truncated_binary(rows, tmp_path):
    path = tmp_path / "feats.tailfm"
    write_feature_matrix(str(path), *rows)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(IoFailure):
        read_features(str(path))


def test_csv_rows_need_equal_width(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("label,f0,f1\na,1,2\nb,3\n")
    with pytest.raises(LengthMismatch):
        read_features(str(path))


def test_writer_rejects_mismatched_labels(rows, tmp_path):
    with pytest.raises(LengthMismatch):
        write_feature_matrix(str(tmp_path / "x"), rows[0], rows[1][:-1])


def test_missing_file(tmp_path):
    with pytest.raises(IoFailure):
        read_features(str(tmp_path / "absent.csv"))
