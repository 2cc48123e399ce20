"""Hybrid solver: rank-one updates interleaved with local refinement.

Each outer iteration computes an approximate top eigenvector v of the
negated gradient, minimizes f(alpha X + beta v v') over the nonnegative
quadrant, concatenates sqrt(beta) v onto the scaled factor, and then runs
the quasi-Newton phase on the factor.  The duality gap

    gap(X) = t * max(lambda_max(-grad_f(X)), 0) + grad_f(X) . X

upper-bounds f(X) - f* for any PSD X once t bounds the trace of a
minimizer; clamping at zero accounts for minimizers with trace below t.
The gap doubles as the stopping rule, and gap + eps_tilde * t is a
certified bound that absorbs the eigensolver tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .eig import EigResult, SymOperator, approx_max_eigvec, dense_max_eigpair
from .errors import DomainError, InvalidInputError, SolverError, StepError
from .local_search import LsConfig, improve
from .objectives import Factor, Objective

TINY_COLUMN = 1e-12  # relative column-norm threshold for rank hygiene


@dataclass
class SolverConfig:
    """Run parameters.  ``trace_bound`` has no universal default: it must
    upper-bound the trace of some minimizer for the gap to certify."""

    trace_bound: float
    eps: float = 1e-6
    max_iters: int = 100
    local_search: bool = True
    eig_max_iters: int = 2000
    seed: int = 0
    record_trace: bool = True
    enforce_fallback: bool = True
    dense_eig: bool = False
    ls: LsConfig = field(default_factory=LsConfig)

    def __post_init__(self):
        if self.eps <= 0:
            raise InvalidInputError("eps must be positive")
        if self.trace_bound <= 0:
            raise InvalidInputError("trace_bound must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")

    @property
    def eps_tilde(self) -> float:
        """Eigensolver tolerance eps / (4 t) used throughout the run."""
        return self.eps / (4.0 * self.trace_bound)


@dataclass
class GapReport:
    """Duality gap pieces at one iterate."""

    lambda_max_clamped: float
    grad_dot_x: float
    gap: float
    wolfe_dual: float


@dataclass
class IterRecord:
    """Per-iteration trace row; f, gap and rank describe the iterate at the
    start of the iteration, alpha/beta the step taken from it (NaN on the
    stopping row, where no step is taken)."""

    i: int
    f: float
    gap: float
    rank: int
    alpha: float
    beta: float
    eig_iters: int
    seconds: float


@dataclass
class StepRecord:
    alpha: float
    beta: float
    eig_iters: int
    rayleigh: float


@dataclass
class SolveResult:
    factor: Factor
    f_value: float
    gap: GapReport
    iterations: int
    rank: int
    converged: bool
    trace: Optional[list] = None


@dataclass
class ConvergenceProbe:
    """Rate-bound harness data: step schedule 2/(i+2) and the error bound
    series 8 C_f / (i+2) built from a curvature-constant upper bound."""

    curvature_bound: float

    def step_size(self, i: int) -> float:
        return 2.0 / (i + 2)

    def bound(self, i: int) -> float:
        return 8.0 * self.curvature_bound / (i + 2)


@dataclass
class ProbePoint:
    i: int
    primal_error: float
    bound: float


def _iter_seed(base_seed: int, i: int) -> int:
    return int(np.random.SeedSequence([base_seed, i]).generate_state(1)[0])


def _top_eig_of_neg_grad(objective: Objective, V: Factor, config: SolverConfig,
                         i: int) -> EigResult:
    op = objective.neg_grad_operator(V)
    if config.dense_eig:
        return dense_max_eigpair(op.to_dense())
    return approx_max_eigvec(op, config.eps_tilde,
                             max_iters=config.eig_max_iters,
                             seed=_iter_seed(config.seed, i))


def _gap_report(objective: Objective, V: Factor, t: float,
                eig: EigResult) -> GapReport:
    lam = max(eig.rayleigh, 0.0)
    gdx = objective.grad_dot_x(V)
    gap = t * lam + gdx
    return GapReport(lambda_max_clamped=lam, grad_dot_x=gdx, gap=gap,
                     wolfe_dual=objective.value(V) - gap)


def duality_gap(objective: Objective, V: Factor, t: float,
                eig_accuracy: float, max_iters: int = 2000,
                seed: int = 0, dense: bool = False) -> GapReport:
    """Standalone gap evaluation at a factor.

    The top eigenvalue of -grad_f is computed to ``eig_accuracy``, so
    gap + eig_accuracy * t always upper-bounds f(X) - f*.
    """
    if t <= 0:
        raise InvalidInputError("trace bound must be positive")
    if eig_accuracy <= 0:
        raise InvalidInputError("eig_accuracy must be positive")
    op = objective.neg_grad_operator(V)
    if dense:
        eig = dense_max_eigpair(op.to_dense())
    else:
        eig = approx_max_eigvec(op, eig_accuracy, max_iters=max_iters, seed=seed)
    return _gap_report(objective, V, t, eig)


# ---------------------------------------------------------------------------
# Two-variable line search on (alpha, beta) >= 0
# ---------------------------------------------------------------------------

def _fd_grad_hess(phi, x, fx, h):
    """Finite-difference gradient and Hessian of a 2-d function on the
    nonnegative quadrant; coordinates at the boundary use one-sided
    stencils so the search never probes negative points."""
    g = np.empty(2)
    hess = np.zeros((2, 2))
    at_boundary = x - h < 0
    e = np.eye(2)
    for j in range(2):
        if at_boundary[j]:
            f1 = phi(*(x + h[j] * e[j]))
            f2 = phi(*(x + 2.0 * h[j] * e[j]))
            g[j] = (-3.0 * fx + 4.0 * f1 - f2) / (2.0 * h[j])
            hess[j, j] = (fx - 2.0 * f1 + f2) / h[j] ** 2
        else:
            fp = phi(*(x + h[j] * e[j]))
            fm = phi(*(x - h[j] * e[j]))
            g[j] = (fp - fm) / (2.0 * h[j])
            hess[j, j] = (fp - 2.0 * fx + fm) / h[j] ** 2
    if np.any(at_boundary):
        f10 = phi(x[0] + h[0], x[1])
        f01 = phi(x[0], x[1] + h[1])
        f11 = phi(x[0] + h[0], x[1] + h[1])
        hess[0, 1] = hess[1, 0] = (f11 - f10 - f01 + fx) / (h[0] * h[1])
    else:
        fpp = phi(*(x + h))
        fpm = phi(x[0] + h[0], x[1] - h[1])
        fmp = phi(x[0] - h[0], x[1] + h[1])
        fmm = phi(*(x - h))
        hess[0, 1] = hess[1, 0] = (fpp - fpm - fmp + fmm) / (4.0 * h[0] * h[1])
    return g, hess


def _projected_newton_2d(phi, x0, max_newton=25):
    """Damped Newton on the quadrant with finite-difference derivatives.

    Never returns a point worse than the start.
    """
    x = np.maximum(np.asarray(x0, dtype=float), 0.0)
    fx = phi(*x)
    if not np.isfinite(fx):
        return x, fx
    for _ in range(max_newton):
        h = 1e-5 * np.maximum(1.0, np.abs(x))
        g, hess = _fd_grad_hess(phi, x, fx, h)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(hess))):
            break
        gnorm = float(np.linalg.norm(g))
        if gnorm <= 1e-10 * (1.0 + abs(fx)):
            break
        # Regularize toward positive definiteness before solving.
        tr, det = hess[0, 0] + hess[1, 1], np.linalg.det(hess)
        mu = 0.0
        if det <= 0 or tr <= 0:
            mu = abs(tr) + np.sqrt(abs(det)) + 1e-8
        try:
            d = np.linalg.solve(hess + mu * np.eye(2), -g)
        except np.linalg.LinAlgError:
            d = -g
        if float(g @ d) >= 0:
            d = -g
        step = 1.0
        improved = False
        for _ in range(30):
            cand = np.maximum(x + step * d, 0.0)
            f_cand = phi(*cand)
            if np.isfinite(f_cand) and f_cand < fx:
                x, fx = cand, f_cand
                improved = True
                break
            step *= 0.5
        if not improved or np.linalg.norm(step * d) <= 1e-14 * (1.0 + np.linalg.norm(x)):
            break
    return x, fx


_BETA_GRID = (1e-3, 1e-2, 0.1, 0.3, 1.0)


def line_search_2d(objective: Objective, V: Factor, v: np.ndarray, i: int,
                   t: float) -> tuple[float, float]:
    """Minimize f(alpha X + beta v v') over alpha, beta >= 0.

    Runs projected Newton from the incumbent (1, 0), from the schedule
    point (1 - 2/(i+2), 2/(i+2) * t), and from the best point of a coarse
    beta grid, then returns the best point seen.  That makes the result no
    worse than keeping the iterate and no worse than the classic step-size
    schedule, which is what both the monotonicity and the rate analysis
    rely on.
    """
    inner = objective.restricted_value(V, np.asarray(v, dtype=float))

    def phi(a, b):
        if a < 0 or b < 0:
            return np.inf
        try:
            val = inner(a, b)
        except DomainError:
            return np.inf
        return val if np.isfinite(val) else np.inf

    alpha_i = 2.0 / (i + 2)
    seeds = [(1.0, 0.0), (1.0 - alpha_i, alpha_i * t)]
    probes = [(a, s * t) for s in _BETA_GRID for a in (1.0, 1.0 - alpha_i)]
    candidates = []
    for point in seeds + probes:
        f_pt = phi(*point)
        if np.isfinite(f_pt):
            candidates.append((f_pt, point))
    if not candidates:
        raise StepError("no finite value found in the two-variable search",
                        iteration=i)
    starts = list(seeds)
    best_probe = min(candidates, key=lambda c: c[0])[1]
    if best_probe not in starts:
        starts.append(best_probe)
    for s in starts:
        x_opt, f_opt = _projected_newton_2d(phi, s)
        if np.isfinite(f_opt):
            candidates.append((f_opt, (float(x_opt[0]), float(x_opt[1]))))
    f_best, best = min(candidates, key=lambda c: c[0])
    return float(best[0]), float(best[1])


def rank_one_step(objective: Objective, V: Factor, config: SolverConfig,
                  i: int, eig: EigResult | None = None
                  ) -> tuple[Factor, StepRecord]:
    """One rank-one update: eigenvector of -grad_f, two-variable search,
    concatenation of the new column."""
    if eig is None:
        eig = _top_eig_of_neg_grad(objective, V, config, i)
    if not eig.converged and not config.enforce_fallback:
        raise StepError("eigensolver did not converge", iteration=i)
    alpha, beta = line_search_2d(objective, V, eig.vector, i,
                                 config.trace_bound)
    sa = np.sqrt(alpha)
    if beta > 0.0:
        entries = np.hstack([sa * V.entries,
                             np.sqrt(beta) * eig.vector[:, None]])
    else:
        entries = sa * V.entries
    return Factor(entries), StepRecord(alpha=alpha, beta=beta,
                                       eig_iters=eig.iterations,
                                       rayleigh=eig.rayleigh)


def _drop_tiny_columns(V: Factor) -> Factor:
    if V.rank == 0:
        return V
    norms = np.linalg.norm(V.entries, axis=0)
    total = np.linalg.norm(V.entries)
    keep = norms > TINY_COLUMN * total
    if np.all(keep):
        return V
    return Factor(V.entries[:, keep])


def solve(objective: Objective, config: SolverConfig,
          callback: Optional[Callable] = None) -> SolveResult:
    """Run the hybrid loop until gap <= eps or max_iters.

    ``callback(i, factor, record)`` runs after each completed iteration;
    returning a truthy value stops the solve early.  f is non-increasing
    across iterations by construction.
    """
    t = config.trace_bound
    V = objective.initial_factor(t)
    trace: list | None = [] if config.record_trace else None
    start = time.perf_counter()
    converged = False
    gap_report: GapReport | None = None
    iterations = config.max_iters

    for i in range(config.max_iters):
        iter_start = time.perf_counter()
        eig = _top_eig_of_neg_grad(objective, V, config, i)
        if not eig.converged and not config.enforce_fallback:
            raise SolverError("eigensolver did not converge", iteration=i)
        gap_report = _gap_report(objective, V, t, eig)
        f_cur = objective.value(V)
        if gap_report.gap <= config.eps:
            converged = True
            iterations = i
            if trace is not None:
                trace.append(IterRecord(
                    i=i, f=f_cur, gap=gap_report.gap, rank=V.rank,
                    alpha=float("nan"), beta=float("nan"),
                    eig_iters=eig.iterations,
                    seconds=time.perf_counter() - iter_start))
            break

        V_next, step = rank_one_step(objective, V, config, i, eig=eig)
        if config.local_search and V_next.rank >= 1:
            V_next = improve(objective, V_next, config.ls)
        V_next = _drop_tiny_columns(V_next)
        V_next = objective.renormalize(V_next, t)

        record = IterRecord(i=i, f=f_cur, gap=gap_report.gap, rank=V.rank,
                            alpha=step.alpha, beta=step.beta,
                            eig_iters=step.eig_iters,
                            seconds=time.perf_counter() - iter_start)
        if trace is not None:
            trace.append(record)
        V = V_next
        iterations = i + 1
        if callback is not None and callback(i, V, record):
            break

    if not converged:
        # The loop ended on budget or callback; certify the returned iterate.
        eig = _top_eig_of_neg_grad(objective, V, config, iterations)
        gap_report = _gap_report(objective, V, t, eig)
        converged = gap_report.gap <= config.eps

    return SolveResult(factor=V, f_value=objective.value(V), gap=gap_report,
                       iterations=iterations, rank=V.rank,
                       converged=converged, trace=trace)


# ---------------------------------------------------------------------------
# Rate-bound probe
# ---------------------------------------------------------------------------

def quad_curvature_bound(t: float) -> float:
    """Analytic curvature bound for f(X) = 0.5 ||X - B||_F^2 over the
    trace-t ball: 0.5 * L * diam^2 with L = 1 and diam <= 2 t."""
    return 2.0 * t * t


def sample_curvature(objective: Objective, t: float, n_samples: int = 200,
                     seed: int = 0, max_rank: int = 3) -> float:
    """Monte-Carlo lower refinement of the curvature constant: draws pairs
    X, Z of trace-t PSD matrices and alpha in (0, 1], and evaluates the
    scaled deviation of f from its linearization."""
    rng = np.random.default_rng(seed)
    n = objective.dim
    best = 0.0
    for _ in range(n_samples):
        k = int(rng.integers(1, max_rank + 1))
        vx = rng.standard_normal((n, k))
        vz = rng.standard_normal((n, k))
        fx_ = Factor(vx * np.sqrt(t) / np.linalg.norm(vx))
        fz_ = Factor(vz * np.sqrt(t) / np.linalg.norm(vz))
        alpha = float(rng.uniform(1e-3, 1.0))
        mix = Factor(np.hstack([np.sqrt(1 - alpha) * fx_.entries,
                                np.sqrt(alpha) * fz_.entries]))
        f_x = objective.value(fx_)
        f_y = objective.value(mix)
        # <Y - X, grad_f(X)> = alpha * (grad_f . Z - grad_f . X)
        op = objective.neg_grad_operator(fx_)
        grad_dot_z = -float(np.sum(fz_.entries * np.column_stack(
            [op.apply(c) for c in fz_.entries.T])))
        lin = alpha * (grad_dot_z - objective.grad_dot_x(fx_))
        dev = (f_y - f_x - lin) / alpha ** 2
        best = max(best, dev)
    return best


def probe_rate(objective: Objective, config: SolverConfig,
               probe: ConvergenceProbe) -> list[ProbePoint]:
    """Run the solver and compare the primal error against the bound series
    8 C_f / (i + 2) at every iterate.

    The objective must expose ``optimal_value``.  If the run stops early on
    the gap rule, the error series is padded with the final error; a frozen
    iterate keeps satisfying the decreasing bound because its error is
    below the stopping threshold.
    """
    if not hasattr(objective, "optimal_value"):
        raise InvalidInputError("probe needs an objective with a known optimum")
    fstar = objective.optimal_value()
    cfg = replace(config, record_trace=True)
    result = solve(objective, cfg)
    f_by_iter = {rec.i: rec.f for rec in result.trace}
    f_final = result.f_value
    points = []
    for i in range(config.max_iters + 1):
        f_i = f_by_iter.get(i, f_final)
        points.append(ProbePoint(i=i, primal_error=f_i - fstar,
                                 bound=probe.bound(i)))
    return points
