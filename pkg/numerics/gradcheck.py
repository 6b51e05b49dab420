"""Central-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from numerics.tensor import Tensor, no_grad, precision

ABSOLUTE_FLOOR = 1e-6
# In 32-bit mode, entries below this fraction of a parameter's largest
# gradient are compared by absolute error (float32 rounding of long sums).
FLOAT32_FLOOR = float(np.sqrt(np.finfo(np.float32).eps))


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_parameter: Dict[str, float] = field(default_factory=dict)
    passed: bool = True
    message: str = ""


def _relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABSOLUTE_FLOOR) -> float:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    small = scale < floor
    errors = np.where(small, diff, diff / np.where(small, 1.0, scale))
    return float(errors.max()) if errors.size else 0.0


def _floor(numeric: np.ndarray, dtype: type) -> float:
    if dtype == np.float64 or numeric.size == 0:
        return ABSOLUTE_FLOOR
    return max(ABSOLUTE_FLOOR, FLOAT32_FLOOR * float(np.abs(numeric).max()))


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                      epsilon: float = 1e-3, tolerance: Optional[float] = None,
                      dtype: type = np.float32) -> GradCheckResult:
    """Compare backprop gradients of ``loss_fn`` with central differences.

    The analytic gradient comes from one forward/backward pass at ``dtype``.
    The central differences are always evaluated in 64-bit on the very same
    parameter values, so a 32-bit check measures the 32-bit backward pass and
    not the rounding of ``loss(p + eps) - loss(p - eps)``.

    ``loss_fn`` must be deterministic (seed any randomness inside it).
    Parameters are restored to their original arrays afterwards.
    """
    originals = [p.data for p in params]
    try:
        with precision(dtype):
            for p in params:
                p.data = p.data.astype(dtype)
                p.grad = None
            loss = loss_fn()
            if not np.isfinite(loss.data).all():
                return GradCheckResult(float("inf"), passed=False, message="non-finite loss")
            loss.backward()
            analytic = [np.zeros(p.dims) if p.grad is None else p.grad.astype(np.float64) for p in params]

        per_parameter: Dict[str, float] = {}
        with precision(np.float64), no_grad():
            for p in params:
                p.data = p.data.astype(np.float64)
            for index, (p, grad) in enumerate(zip(params, analytic)):
                numeric = np.zeros_like(p.data)
                flat = p.data.reshape(-1)
                for i in range(flat.size):
                    saved = flat[i]
                    flat[i] = saved + epsilon
                    upper = loss_fn().item()
                    flat[i] = saved - epsilon
                    lower = loss_fn().item()
                    flat[i] = saved
                    if not (np.isfinite(upper) and np.isfinite(lower)):
                        return GradCheckResult(float("inf"), per_parameter, False,
                                               f"non-finite loss perturbing {p.name or index}[{i}]")
                    numeric.reshape(-1)[i] = (upper - lower) / (2.0 * epsilon)
                per_parameter[p.name or f"param{index}"] = _relative_error(grad, numeric, _floor(numeric, dtype))
    finally:
        for p, data in zip(params, originals):
            p.data = data
            p.grad = None

    worst = max(per_parameter.values(), default=0.0)
    passed = tolerance is None or worst < tolerance
    return GradCheckResult(worst, per_parameter, passed)
