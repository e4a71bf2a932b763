"""Central finite-difference gradient checking."""

from typing import Callable, Sequence

import numpy as np

from utils.errors import ContractError
from .tensor import Tensor, backward


def numeric_grad(fn: Callable[[], Tensor], target: Tensor, h: float = 1e-6) -> np.ndarray:
    """d fn / d target by central differences, perturbing `target.data` in place."""
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n|| / max(||a||, ||n||, floor) in the Euclidean norm."""
    if not analytic.size:
        return 0.0
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    return float(np.linalg.norm(analytic - numeric)) / denom


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-6, floor: float = 1e-8) -> float:
    """Compare reverse-mode gradients of the scalar `fn()` with finite differences.

    `fn` is re-evaluated for every perturbation so it must be a pure closure
    over `inputs` (no dropout, no running-statistic updates in train mode).

    Returns
    -------
    float
        The largest relative error over all inputs.
    """
    for tensor in inputs:
        if not tensor.requires_grad:
            raise ContractError("gradcheck inputs must require grad")
        tensor.zero_grad()
    loss = fn()
    backward(loss)
    worst = 0.0
    for tensor in inputs:
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        numeric = numeric_grad(fn, tensor, h)
        worst = max(worst, relative_error(analytic, numeric, floor))
    return worst
