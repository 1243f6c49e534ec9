"""Central finite-difference oracles for the analytic gradients."""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Tuple

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, backward


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1e-12, |a| + |n|) over entries."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(fn: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. ``array``, perturbed in place and restored."""
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between the analytic and numeric gradient of scalar ``f`` at ``x``."""
    if x.dtype != np.float64:
        raise ContractError("finite_diff_check requires a float64 input")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    probe = x.data.copy()
    numeric = numeric_grad(lambda: f(Tensor(probe)).item(), probe, h)
    return relative_error(analytic, numeric)


def check_parameters(
    loss_fn: Callable[[], Tensor], params: Iterable[Tuple[str, Tensor]], h: float = 1e-5
) -> Dict[str, float]:
    """Relative error per named parameter for a closure computing a scalar loss.

    Parameters must be float64 leaves; their ``data`` is perturbed in place.
    """
    params = list(params)
    for _, p in params:
        if p.dtype != np.float64:
            raise ContractError("check_parameters requires float64 parameters")
        p.grad = None
    backward(loss_fn())
    errors = {}
    for name, p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_grad(lambda: loss_fn().item(), p.data, h)
        errors[name] = relative_error(analytic, numeric)
    return errors
