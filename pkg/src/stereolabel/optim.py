"""Damped nonlinear least squares (Levenberg-Marquardt style).

Shared by board pose estimation and keypoint triangulation.  The solver is
deterministic: fixed iteration schedule, no randomness, and a manifold
update hook so rotations can be optimized with local exponential-map
increments without leaving SO(3).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

MAX_ITERATIONS = 100
STEP_TOL = 1e-10
REL_DECREASE_TOL = 1e-12


@dataclass
class LMResult:
    x: object
    cost: float          # sum of squared residuals
    initial_cost: float
    iterations: int
    converged: bool

    @property
    def reduced(self) -> bool:
        return self.cost <= self.initial_cost


def levenberg_marquardt(
    residual_fn: Callable,
    jacobian_fn: Callable,
    x0,
    update_fn: Callable | None = None,
    max_iterations: int = MAX_ITERATIONS,
    step_tol: float = STEP_TOL,
    rel_decrease_tol: float = REL_DECREASE_TOL,
) -> LMResult:
    """Minimize ||residual_fn(x)||^2 with LM damping.

    ``jacobian_fn(x)`` returns the Jacobian of the residual with respect to
    the local step ``delta`` at delta=0; ``update_fn(x, delta)`` applies a
    step (defaults to ``x + delta``).  Stops when the step norm falls below
    ``step_tol``, the relative cost decrease falls below
    ``rel_decrease_tol``, or after ``max_iterations``.
    """
    if update_fn is None:
        update_fn = lambda x, delta: x + delta

    x = x0
    r = np.asarray(residual_fn(x), dtype=float).ravel()
    cost = float(r @ r)
    initial_cost = cost
    lam = -1.0  # initialized from the first Hessian diagonal; callers supply good inits
    converged = False
    iterations = 0

    diag_idx = None
    for iterations in range(1, max_iterations + 1):
        jac = np.asarray(jacobian_fn(x), dtype=float)
        grad = jac.T @ r
        hess = jac.T @ jac
        diag = hess.diagonal().copy()
        diag[diag < 1e-12] = 1e-12
        if diag_idx is None:
            diag_idx = np.arange(len(diag))
        if lam < 0:
            lam = 1e-8 * float(np.max(diag))

        accepted = False
        for _ in range(50):  # damping retries within one outer iteration
            damped = hess.copy()
            damped[diag_idx, diag_idx] += lam * diag
            try:
                step = np.linalg.solve(damped, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = update_fn(x, step)
            r_new = np.asarray(residual_fn(x_new), dtype=float).ravel()
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                decrease = cost - cost_new
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if float(step @ step) < step_tol * step_tol or decrease <= rel_decrease_tol * max(cost, 1e-300):
                    converged = True
                break
            lam *= 10.0
            if lam > 1e16:
                break
        if converged or not accepted:
            # no acceptable step at any damping level means we are at a
            # (possibly exact) local minimum
            converged = converged or not accepted
            break

    return LMResult(x=x, cost=cost, initial_cost=initial_cost, iterations=iterations, converged=converged)
