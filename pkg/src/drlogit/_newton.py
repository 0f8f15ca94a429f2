"""Damped Newton iteration shared by the nuisance fits and the
estimating-equation solvers: full Newton steps with step-halving until
the max-norm of the equation decreases."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class NewtonResult:
    params: np.ndarray
    converged: bool
    iterations: int
    step_halvings: int
    final_norm: float
    singular: bool = False


def damped_newton(
    equation: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    start: np.ndarray,
    *,
    tol: float = 1e-12,
    max_iter: int = 100,
    max_halvings: int = 50,
) -> NewtonResult:
    """Solve equation(params) = 0.  Each iteration takes the full Newton
    step and halves it until the equation max-norm strictly decreases
    (NaN/inf norms count as no improvement).  Never raises: failures are
    reported through the `converged` and `singular` flags."""
    params = np.array(start, dtype=float)
    eq = np.asarray(equation(params), dtype=float)
    norm = _max_norm(eq)
    halvings = 0
    for it in range(max_iter):
        if norm <= tol:
            return NewtonResult(params, True, it, halvings, norm)
        jac = np.asarray(jacobian(params), dtype=float)
        try:
            step = np.linalg.solve(jac, -eq)
        except np.linalg.LinAlgError:
            return NewtonResult(params, False, it, halvings, norm, singular=True)
        if not np.isfinite(step).all():
            return NewtonResult(params, False, it, halvings, norm, singular=True)
        scale = 1.0
        for _ in range(max_halvings + 1):
            cand = params + scale * step
            cand_eq = np.asarray(equation(cand), dtype=float)
            cand_norm = _max_norm(cand_eq)
            if cand_norm < norm:
                params, eq, norm = cand, cand_eq, cand_norm
                break
            scale *= 0.5
            halvings += 1
        else:
            # no step length improved the equation norm
            return NewtonResult(params, norm <= tol, it + 1, halvings, norm)
    return NewtonResult(params, norm <= tol, max_iter, halvings, norm)


def _max_norm(v: np.ndarray) -> float:
    if not np.isfinite(v).all():
        return float("inf")
    return float(np.max(np.abs(v))) if v.size else 0.0
