"""Small BFGS minimizer with Armijo backtracking, used by the prior fits."""
from dataclasses import dataclass

import numpy as np


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool


def bfgs(fun_grad, x0, gtol=1e-6, maxiter=500, armijo=1e-4, max_halvings=60):
    """Minimize ``fun_grad(x) -> (value, gradient)``.

    Converged when the gradient infinity-norm drops below ``gtol``.  Steps are
    halved until the Armijo condition holds; the inverse-Hessian update is
    skipped when the curvature condition fails.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    n = x.size
    H = np.eye(n)
    it = 0
    for it in range(1, maxiter + 1):
        if np.max(np.abs(g)) < gtol:
            return OptimResult(x, f, g, it - 1, True)
        d = -H @ g
        slope = g @ d
        if slope >= 0:
            H = np.eye(n)
            d = -g
            slope = g @ d
        step = 1.0
        for _ in range(max_halvings):
            x_new = x + step * d
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + armijo * step * slope:
                break
            step *= 0.5
        else:
            return OptimResult(x, f, g, it, False)
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            if it == 1:
                H = np.eye(n) * (sy / (y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
    converged = bool(np.max(np.abs(g)) < gtol)
    return OptimResult(x, f, g, it, converged)
