"""Small damped Gauss-Newton (Levenberg-Marquardt) least-squares solver."""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import FitError


class LMResult(NamedTuple):
    params: np.ndarray
    cost: float
    iterations: int


def levenberg_marquardt(
    residuals: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    p0,
    feasible: Callable[[np.ndarray], bool] | None = None,
    max_iter: int = 200,
    xtol: float = 1e-10,
    gtol: float = 1e-15,
) -> LMResult:
    """Minimise ``sum(residuals(p)**2)`` starting from ``p0``.

    Uses Marquardt's diagonal scaling of the normal equations. Trial points
    rejected by ``feasible`` are treated like uphill steps (damping grows).
    Converges when the relative step drops below ``xtol`` or the scaled
    gradient vanishes; raises :class:`FitError` with the best iterate after
    ``max_iter`` iterations otherwise.
    """
    p = np.asarray(p0, dtype=float).copy()
    if feasible is not None and not feasible(p):
        raise FitError("initial point outside the model domain", best=p, cost=None)
    r = residuals(p)
    cost = float(r @ r)
    lam = 1e-3

    for it in range(1, max_iter + 1):
        if cost == 0.0:
            return LMResult(p, cost, it - 1)
        J = jacobian(p)
        A = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(A), np.finfo(float).tiny)
        if np.max(np.abs(g) / np.sqrt(diag)) <= gtol * np.sqrt(cost):
            return LMResult(p, cost, it - 1)

        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                trial = p + step
                if feasible is None or feasible(trial):
                    r_trial = residuals(trial)
                    cost_trial = float(r_trial @ r_trial)
                    if np.isfinite(cost_trial) and cost_trial < cost:
                        p, r, cost = trial, r_trial, cost_trial
                        lam = max(lam / 10.0, 1e-15)
                        break
            lam *= 10.0
            if lam > 1e16:
                # no downhill step exists at any damping: stationary point
                return LMResult(p, cost, it)

        if np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol):
            return LMResult(p, cost, it)

    raise FitError(f"no convergence after {max_iter} iterations", best=p, cost=cost)
