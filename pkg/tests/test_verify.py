import numpy as np
import pytest

from app.models.config import ModelConfig, TaskGridConfig, VerifyConfig
from app.models.report import PropertyResult
from app.models.state import TailModel
from app.services.task_service import make_task_grid
from app.services.verify_service import (
    check_classify_shift, check_coverage, check_gradient_unbiasedness, check_model_gradients,
    check_primitive_gradients, check_uniformity, embedding_selection_counts, gradient_unbiasedness,
    run_property_suite, toy_episode,
)
from app.utiles.custom_helpers import derive_rng


def test_property_line_format():
    assert PropertyResult(name="x", passed=True, detail="ok").line() == "PASS x: ok"
    assert PropertyResult(name="y", passed=False, detail="bad").line() == "FAIL y: bad"


def test_classify_shift_and_primitive_gradients():
    assert check_classify_shift(seed=0).passed
    result = check_primitive_gradients(seed=0)
    assert result.passed, result.detail


def test_uniformity_of_maps_and_injections():
    results = check_uniformity(draws=12_000, seed=0)
    assert [r.name for r in results] == ["extended-permutation uniformity", "label-injection uniformity"]
    assert all(r.passed for r in results), [r.detail for r in results]


def test_coverage_statistics():
    results = check_coverage(t=4000, seed=0)
    assert all(r.passed for r in results), [r.detail for r in results]


def test_embedding_selection_counts_total():
    counts = embedding_selection_counts(300, 5, 50, derive_rng(0, "counts"))
    assert counts.sum() == 1500 and counts.shape == (50,)


def test_whole_model_gradient_check_on_toy_model():
    result = check_model_gradients(ModelConfig.toy(), seed=0)
    assert result.passed, result.detail


def test_gradient_unbiasedness_ratios_are_finite():
    model = TailModel.initialise(ModelConfig.toy(), derive_rng(0, "unbiased"))
    ratios = gradient_unbiasedness(model, toy_episode(model.config, 0, n_shot=2, n_query=2), draws=200, seed=0)
    assert ratios.shape == (4,)
    assert np.all(np.isfinite(ratios))


@pytest.mark.slow
def test_gradient_unbiasedness_within_three_standard_errors():
    result = check_gradient_unbiasedness(ModelConfig.toy(), draws=10_000, seed=0)
    assert result.passed, result.detail


@pytest.mark.slow
def test_full_property_suite_passes_on_untrained_desk_model():
    model = TailModel.initialise(ModelConfig(), derive_rng(0, "init"))
    meta = make_task_grid(TaskGridConfig())
    results = run_property_suite(model, meta, VerifyConfig(), seed=0)
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
