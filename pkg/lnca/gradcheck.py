from __future__ import annotations

"""
Central finite-difference oracle shared by the test suite.

The checked scalar is sum(w ∘ fn(inputs)) for a fixed random weighting w, so
every output element contributes to the comparison.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument
from .tensor import Tensor, no_grad


@dataclass
class GradcheckResult:
    max_rel_error: float
    per_input: list[float]

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              seed: int = 0) -> GradcheckResult:
    """
    Compare backward() against central differences for every input that
    requires grad. Inputs must be float64; `fn` must be deterministic (pass
    stochastic ops a freshly seeded generator inside `fn`).
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise InvalidArgument(f"gradcheck needs float64 inputs, got {t.dtype}")

    out = fn(*inputs)
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    for t in inputs:
        t.grad = None
    (out * Tensor(weights)).sum().backward()

    def objective() -> float:
        with no_grad():
            return float((fn(*inputs).data * weights).sum())

    errors = []
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = objective()
            flat[i] = orig - h
            down = objective()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        errors.append(_relative_error(analytic, numeric))
    return GradcheckResult(max(errors, default=0.0), errors)
