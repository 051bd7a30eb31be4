# app/nn/gradcheck.py
"""Central finite-difference oracle for the autodiff engine."""
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from app.nn.tensor import Tensor, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """
    max |a - n| / max(max|a|, max|n|, floor).

    The error is normalised by the largest magnitude in the whole tensor, not
    entry by entry, so an entry far below the tensor's peak can carry a large
    error relative to itself and still score small.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def numerical_gradient(
    loss_value: Callable[[], float],
    tensor: Tensor,
    step: float = 1e-5,
    entries: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Central differences of `loss_value` w.r.t. `tensor.data`, perturbing in place.

    `entries` (flat indices) limits which coordinates are probed; others stay 0.
    """
    grad = np.zeros(tensor.data.shape, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    flat_grad = grad.reshape(-1)
    probe = range(flat.size) if entries is None else entries
    for i in probe:
        original = flat[i]
        flat[i] = original + step
        plus = loss_value()
        flat[i] = original - step
        minus = loss_value()
        flat[i] = original
        flat_grad[i] = (plus - minus) / (2.0 * step)
    return grad


def check_gradients(
    build_loss: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-12,
) -> Dict[str, float]:
    """
    Compare backward() against finite differences for each named tensor.

    `build_loss` must rebuild the scalar loss from the current parameter values.
    With `max_entries`, each tensor is probed on a random subset of coordinates.
    Returns name -> relative error.
    """
    for tensor in params.values():
        tensor.zero_grad()
    backward(build_loss())
    analytic = {name: np.array(t.grad, dtype=np.float64) for name, t in params.items()}

    def loss_value() -> float:
        with no_grad():
            return float(build_loss().data)

    rng = rng or np.random.default_rng(0)
    errors: Dict[str, float] = {}
    for name, tensor in params.items():
        entries = None
        if max_entries is not None and tensor.data.size > max_entries:
            entries = np.sort(rng.choice(tensor.data.size, size=max_entries, replace=False))
        numeric = numerical_gradient(loss_value, tensor, step, entries)
        a = analytic[name]
        if entries is not None:
            a = a.reshape(-1)[entries]
            numeric = numeric.reshape(-1)[entries]
        errors[name] = relative_error(a, numeric, floor)
    return errors
