"""Implicit symmetric operators and largest-eigenpair routines.

The solver only ever touches gradients through matrix-vector products, so
the eigenvector computation is matvec-only: restarted Lanczos with full
reorthogonalization on a bounded Krylov block, restarting from the current
Ritz vector.  A dense eigendecomposition is kept as a small-dimension
fallback and as the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NumericalError

DENSE_DIM_CAP = 2000
LANCZOS_BLOCK = 30


@dataclass(frozen=True)
class SymOperator:
    """A symmetric linear map given by dimension and matvec.

    ``apply`` must be mathematically equal to ``x -> M x`` for a fixed
    symmetric matrix M and must be deterministic: the same input vector
    yields the same output within one process configuration.
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInputError("operator dimension must be >= 1")

    def to_dense(self) -> np.ndarray:
        """Materialize the operator by applying it to the identity columns."""
        cols = [np.asarray(self.apply(e)) for e in np.eye(self.dim)]
        return np.column_stack(cols)


def operator_from_dense(matrix: np.ndarray) -> SymOperator:
    m = np.asarray(matrix, dtype=float)
    return SymOperator(dim=m.shape[0], apply=lambda x: m @ x)


@dataclass
class EigResult:
    """Approximate largest eigenpair.

    ``rayleigh`` is v' M v recomputed at the returned vector; ``history``
    records the Rayleigh quotient after each outer (restart) step.
    """

    vector: np.ndarray
    rayleigh: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _top_ritz(alphas, betas, basis):
    """Largest Ritz pair of the tridiagonal built from one Lanczos cycle."""
    m = len(alphas)
    if m == 1:
        theta = alphas[0]
        s = np.ones(1)
    else:
        theta_all, s_all = scipy.linalg.eigh_tridiagonal(
            np.asarray(alphas), np.asarray(betas[: m - 1]),
            select="i", select_range=(m - 1, m - 1)
        )
        theta = theta_all[0]
        s = s_all[:, 0]
    v = basis[:, :m] @ s
    nrm = np.linalg.norm(v)
    if nrm > 0:
        v = v / nrm
    return theta, v


def approx_max_eigvec(op: SymOperator, eps_tilde: float, max_iters: int = 1000,
                      seed: int = 0, block: int = LANCZOS_BLOCK) -> EigResult:
    """Approximate largest eigenpair of a symmetric operator.

    Returns a unit vector v with v' M v >= lambda_max(M) - eps_tilde when
    ``converged`` is set.  The internal stopping rule is the residual bound
    ||M v - rho v|| <= eps_tilde / 2 checked after each Lanczos cycle; the
    cycle restarts from the current Ritz vector, which keeps the Rayleigh
    quotient non-decreasing across restarts.  If the matvec budget runs out
    first, ``converged`` is False and the best iterate seen is returned.

    Only v v' matters downstream, so either sign of the vector is valid.
    """
    if op.dim < 1:
        raise InvalidInputError("operator dimension must be >= 1")
    if eps_tilde <= 0:
        raise InvalidInputError("eps_tilde must be positive")
    if max_iters < 1:
        raise InvalidInputError("max_iters must be >= 1")

    n = op.dim
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)

    resid_tol = eps_tilde / 2.0
    matvecs = 0
    history: list = []
    best_vec = q
    best_ray = -np.inf
    stalled_cycles = 0

    def _apply_checked(x):
        nonlocal matvecs
        matvecs += 1
        w = np.asarray(op.apply(x), dtype=float)
        if w.shape != (n,):
            raise InvalidInputError(
                f"operator returned shape {w.shape}, expected ({n},)")
        if not np.all(np.isfinite(w)):
            raise NumericalError(
                "operator produced non-finite values", iteration=matvecs)
        return w

    while matvecs + 1 < max_iters:
        # one application per cycle is reserved for the residual check
        m_cap = min(block, n, max_iters - matvecs - 1)
        basis = np.empty((n, m_cap))
        alphas: list = []
        betas: list = []
        q_cur = q
        broke_down = False
        j = 0
        while j < m_cap:
            basis[:, j] = q_cur
            w = _apply_checked(q_cur)
            alphas.append(float(q_cur @ w))
            # Full reorthogonalization, applied twice for stability.
            active = basis[:, : j + 1]
            w -= active @ (active.T @ w)
            w -= active @ (active.T @ w)
            beta = float(np.linalg.norm(w))
            j += 1
            if beta <= 1e-14 * max(1.0, abs(alphas[-1])):
                broke_down = True
                break
            if j < m_cap:
                betas.append(beta)
                q_cur = w / beta

        rho_ritz, v = _top_ritz(alphas, betas, basis)
        mv = _apply_checked(v)
        rayleigh = float(v @ mv)
        residual = float(np.linalg.norm(mv - rayleigh * v))
        prev_ray = history[-1] if history else -np.inf
        history.append(rayleigh)
        if rayleigh > best_ray:
            best_ray = rayleigh
            best_vec = v
        if residual <= resid_tol:
            return EigResult(vector=v, rayleigh=rayleigh, iterations=matvecs,
                             converged=True, history=history)
        # A requested absolute accuracy far below the operator's scale can be
        # out of reach for float64; stop burning the budget once the Rayleigh
        # quotient stops moving at machine precision.
        if rayleigh - prev_ray <= 1e-13 * max(1.0, abs(rayleigh)):
            stalled_cycles += 1
            if stalled_cycles >= 3:
                break
        else:
            stalled_cycles = 0
        if broke_down:
            # Invariant subspace without a converged residual: mix in a fresh
            # direction so the next cycle can leave the subspace.
            noise = rng.standard_normal(n)
            q = v + 1e-8 * noise / np.linalg.norm(noise)
            q /= np.linalg.norm(q)
        else:
            q = v

    if not history:
        # budget too small for even one cycle; report the start vector
        mv = _apply_checked(best_vec)
        best_ray = float(best_vec @ mv)
        history.append(best_ray)
    return EigResult(vector=best_vec, rayleigh=best_ray, iterations=matvecs,
                     converged=False, history=history)


def dense_max_eigpair(matrix: np.ndarray, max_dim: int = DENSE_DIM_CAP) -> EigResult:
    """Exact largest eigenpair of a dense symmetric matrix (test oracle and
    small-dimension fallback)."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n < 1:
        raise InvalidInputError("matrix dimension must be >= 1")
    if n > max_dim:
        raise InvalidInputError(f"dimension {n} exceeds dense cap {max_dim}")
    if np.max(np.abs(a - a.T)) > 1e-8:
        raise InvalidInputError("matrix is not symmetric within 1e-8")
    sym = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(sym)
    v = vecs[:, -1]
    rayleigh = float(v @ (sym @ v))
    return EigResult(vector=v, rayleigh=rayleigh, iterations=0, converged=True,
                     history=[rayleigh])
