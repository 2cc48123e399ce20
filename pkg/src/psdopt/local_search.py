"""Nonlinear refinement of the factor: limited-memory BFGS over V.

f(V V') is not convex in V, so this phase only promises a local search:
the returned factor never has a larger objective value than the input,
and any non-finite value or gradient abandons the phase with the best
finite iterate found so far.  That never-worse guarantee is all the outer
loop's convergence argument needs from this phase.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import line_search as _wolfe_line_search
from scipy.optimize._linesearch import LineSearchWarning

from .errors import DomainError, InvalidInputError
from .objectives import Factor, Objective


@dataclass
class LsConfig:
    """Inner-minimizer knobs; defaults follow common L-BFGS practice."""

    memory: int = 10
    max_iters: int = 200
    grad_tol: float = 1e-6  # on ||grad_factor||_F, scaled by 1 + |f|
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0):
            raise InvalidInputError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.memory < 1 or self.max_iters < 1:
            raise InvalidInputError("memory and max_iters must be >= 1")


@dataclass
class LsStep:
    """One accepted quasi-Newton step, kept for descent-condition checks."""

    f_before: float
    f_after: float
    step_size: float
    directional_deriv: float


def _two_loop(grad, s_hist, y_hist, rho_hist):
    q = grad.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if y_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def improve(objective: Objective, V: Factor, config: LsConfig | None = None,
            history: list | None = None) -> Factor:
    """Refine the factor in place of shape (n, k); returns a factor of the
    same shape with objective value <= the input's value.

    ``history`` (optional list) collects an ``LsStep`` per accepted step.
    """
    if config is None:
        config = LsConfig()
    if V.rank < 1:
        raise InvalidInputError("local search needs a factor of rank >= 1")
    n, k = V.entries.shape

    def fun(x):
        try:
            val = objective.value(Factor(x.reshape(n, k)))
        except DomainError:
            return np.inf
        return val if np.isfinite(val) else np.inf

    def grad(x):
        try:
            g = objective.grad_factor(Factor(x.reshape(n, k))).ravel()
        except DomainError:
            return np.full(n * k, np.nan)
        return g

    x = V.entries.ravel().copy()
    f = fun(x)
    if not np.isfinite(f):
        return V
    g = grad(x)
    if not np.all(np.isfinite(g)):
        return V

    best_x, best_f = x.copy(), f
    s_hist: deque = deque(maxlen=config.memory)
    y_hist: deque = deque(maxlen=config.memory)
    rho_hist: deque = deque(maxlen=config.memory)

    for _ in range(config.max_iters):
        gnorm = np.linalg.norm(g)
        if gnorm <= config.grad_tol * (1.0 + abs(f)):
            break
        d = -_two_loop(g, list(s_hist), list(y_hist), list(rho_hist))
        slope = float(g @ d)
        if not np.isfinite(slope) or slope >= 0:
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            d = -g
            slope = -float(g @ g)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            alpha, _, _, f_new, _, g_new = _wolfe_line_search(
                fun, grad, x, d, gfk=g, old_fval=f,
                c1=config.wolfe_c1, c2=config.wolfe_c2, maxiter=40)
        if alpha is None:
            alpha, f_new = _armijo_backtrack(fun, x, d, f, slope, config.wolfe_c1)
            g_new = None
            if alpha is None:
                break
        if f_new is None or not np.isfinite(f_new) or f_new >= f:
            break

        x_new = x + alpha * d
        if g_new is None:
            g_new = grad(x_new)
        if not np.all(np.isfinite(g_new)):
            # Accept the point but abandon the phase.
            if f_new < best_f:
                best_x, best_f = x_new, f_new
            break
        if history is not None:
            history.append(LsStep(f_before=f, f_after=f_new,
                                  step_size=float(alpha),
                                  directional_deriv=slope))
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s); y_hist.append(y); rho_hist.append(1.0 / sy)
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_x, best_f = x.copy(), f

    return Factor(best_x.reshape(n, k))


def _armijo_backtrack(fun, x, d, f0, slope, c1, max_halvings=30):
    """Plain backtracking that still enforces the sufficient-decrease rule."""
    step = 1.0
    for _ in range(max_halvings):
        f_try = fun(x + step * d)
        if np.isfinite(f_try) and f_try <= f0 + c1 * step * slope:
            return step, f_try
        step *= 0.5
    return None, None
