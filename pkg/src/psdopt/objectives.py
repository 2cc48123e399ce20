"""Objective interface and the four built-in objectives.

Every objective exposes the same surface over the factored iterate
X = V V':

* ``value(V)``            f(V V')
* ``grad_factor(V)``      2 * grad_f(V V') * V, the gradient in V
* ``neg_grad_operator(V)``  x -> -grad_f(V V') x as a ``SymOperator``
* ``grad_dot_x(V)``       grad_f(X) . X, the term entering the duality gap

Gradients of f are taken on full matrix space with the doubled off-diagonal
convention, which keeps grad_f symmetric and makes grad_factor the plain
Euclidean gradient of ``V -> f(V V')``.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .eig import SymOperator, dense_max_eigpair
from .errors import DomainError, InvalidInputError


@dataclass(frozen=True)
class Factor:
    """Low-rank factor V with X = V V'; rank 0 denotes X = 0."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2:
            raise InvalidInputError(f"factor must be 2-d, got shape {e.shape}")
        object.__setattr__(self, "entries", e)

    @staticmethod
    def zero(rows: int) -> "Factor":
        return Factor(np.zeros((rows, 0)))

    @staticmethod
    def from_vector(v: np.ndarray, scale: float = 1.0) -> "Factor":
        return Factor(scale * np.asarray(v, dtype=float).reshape(-1, 1))

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def rank(self) -> int:
        return self.entries.shape[1]

    def trace(self) -> float:
        """Tr(V V') = ||V||_F^2."""
        return float(np.sum(self.entries * self.entries))

    def gram(self) -> np.ndarray:
        """Dense X = V V'; only for small dimensions."""
        return self.entries @ self.entries.T

    def scaled(self, c: float) -> "Factor":
        return Factor(c * self.entries)


class Objective(abc.ABC):
    """Smooth function of X = V V' over the PSD cone."""

    @property
    @abc.abstractmethod
    def dim(self) -> int:
        ...

    @abc.abstractmethod
    def value(self, V: Factor) -> float:
        ...

    @abc.abstractmethod
    def grad_factor(self, V: Factor) -> np.ndarray:
        ...

    @abc.abstractmethod
    def neg_grad_operator(self, V: Factor) -> SymOperator:
        ...

    def grad_dot_x(self, V: Factor) -> float:
        # grad_f . V V' = 0.5 <V, 2 grad_f V>
        return 0.5 * float(np.vdot(V.entries, self.grad_factor(V)))

    def initial_factor(self, trace_bound: float) -> Factor:
        return Factor.zero(self.dim)

    def renormalize(self, V: Factor, trace_bound: float) -> Factor:
        """Hook for objectives that are invariant under scaling of X."""
        return V

    def restricted_value(self, V: Factor, v: np.ndarray):
        """Return phi(a, b) = f(a * V V' + b * v v') for the two-variable
        search.  The default assembles the concatenated factor on every
        call; concrete objectives override this with precomputed forms."""
        ve = V.entries
        n, k = ve.shape
        v = np.asarray(v, dtype=float)

        def phi(a: float, b: float) -> float:
            w = np.empty((n, k + 1))
            np.multiply(ve, np.sqrt(a), out=w[:, :k])
            w[:, k] = np.sqrt(b) * v
            return self.value(Factor(w))

        return phi

    def _check_rows(self, V: Factor):
        if V.rows != self.dim:
            raise InvalidInputError(
                f"factor has {V.rows} rows, objective dimension is {self.dim}")


def _check_symmetric(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{what} must be square, got shape {a.shape}")
    if np.max(np.abs(a - a.T)) > 1e-8:
        raise InvalidInputError(f"{what} is not symmetric within 1e-8")
    return 0.5 * (a + a.T)


# ---------------------------------------------------------------------------
# Quadratic test objective: f(X) = 0.5 ||X - B||_F^2
# ---------------------------------------------------------------------------

class QuadraticObjective(Objective):
    """f(X) = 0.5 ||X - B||_F^2 with grad_f(X) = X - B.

    The minimizer over the PSD cone is the projection of B obtained by
    clipping negative eigenvalues, which gives an analytic optimal value
    for convergence tests.
    """

    def __init__(self, target: np.ndarray):
        self.target = _check_symmetric(target, "target")
        self._b_sq = float(np.sum(self.target * self.target))

    @property
    def dim(self) -> int:
        return self.target.shape[0]

    def value(self, V: Factor) -> float:
        self._check_rows(V)
        ve = V.entries
        gram = ve.T @ ve
        bv = self.target @ ve
        return 0.5 * (float(np.sum(gram * gram))
                      - 2.0 * float(np.sum(ve * bv)) + self._b_sq)

    def grad_factor(self, V: Factor) -> np.ndarray:
        self._check_rows(V)
        ve = V.entries
        return 2.0 * (ve @ (ve.T @ ve) - self.target @ ve)

    def neg_grad_operator(self, V: Factor) -> SymOperator:
        self._check_rows(V)
        ve = V.entries.copy()
        b = self.target

        def apply(x):
            return b @ x - ve @ (ve.T @ x)

        return SymOperator(dim=self.dim, apply=apply)

    def grad_dot_x(self, V: Factor) -> float:
        self._check_rows(V)
        ve = V.entries
        gram = ve.T @ ve
        return float(np.sum(gram * gram)) - float(np.sum(ve * (self.target @ ve)))

    def restricted_value(self, V: Factor, v: np.ndarray):
        self._check_rows(V)
        ve = V.entries
        v = np.asarray(v, dtype=float)
        gram = ve.T @ ve
        x_dot_x = float(np.sum(gram * gram))
        vtv = ve.T @ v
        x_dot_vv = float(vtv @ vtv)
        vv_dot_vv = float(v @ v) ** 2
        x_dot_b = float(np.sum(ve * (self.target @ ve)))
        vv_dot_b = float(v @ (self.target @ v))
        b_sq = self._b_sq

        def phi(a: float, b: float) -> float:
            return 0.5 * (a * a * x_dot_x + 2.0 * a * b * x_dot_vv
                          + b * b * vv_dot_vv
                          - 2.0 * a * x_dot_b - 2.0 * b * vv_dot_b + b_sq)

        return phi

    def cone_optimum(self) -> tuple[Factor, float]:
        """PSD projection of B by eigenvalue clipping and its objective value."""
        vals, vecs = np.linalg.eigh(self.target)
        pos = vals > 0
        factor = Factor(vecs[:, pos] * np.sqrt(vals[pos]))
        fstar = 0.5 * float(np.sum(np.minimum(vals, 0.0) ** 2))
        return factor, fstar

    def optimal_value(self) -> float:
        return self.cone_optimum()[1]

    def optimal_trace(self) -> float:
        vals = np.linalg.eigvalsh(self.target)
        return float(np.sum(np.maximum(vals, 0.0)))


# ---------------------------------------------------------------------------
# Matrix completion on the (m + n)-dimensional block embedding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatingSet:
    """Observed ratings (user, item, value) with dense 0-based indices."""

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if not (users.shape == items.shape == values.shape) or users.ndim != 1:
            raise InvalidInputError("users, items, values must be equal-length 1-d")
        if users.size:
            if users.min() < 0 or users.max() >= self.num_users:
                raise InvalidInputError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise InvalidInputError("item index out of range")
            keys = users * self.num_items + items
            if np.unique(keys).size != keys.size:
                raise InvalidInputError("duplicate (user, item) entry")
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.users.size


class MatrixCompletionObjective(Objective):
    """Squared residuals on the observed entries of the symmetric embedding.

    The embedded matrix is (m + n) x (m + n) with user rows stacked above
    item rows; each observed rating appears at the two symmetric positions
    (i, m + j) and (m + j, i) and both are summed, so f counts each squared
    residual twice.  This keeps grad_f symmetric; the scaling does not move
    the minimizer.  Predictions and RMSE use the one-sided residuals.
    """

    def __init__(self, ratings: RatingSet):
        self.ratings = ratings
        self._m = ratings.num_users
        self._dim = ratings.num_users + ratings.num_items
        self._rows_u = ratings.users
        self._rows_i = ratings.items + self._m
        # Fixed CSR pattern for the sparse gradient; data slots get filled
        # with the residuals of the current iterate on every call.
        nnz = 2 * len(ratings)
        coo = scipy.sparse.coo_matrix(
            (np.arange(nnz, dtype=np.int64) + 1,
             (np.concatenate([self._rows_u, self._rows_i]),
              np.concatenate([self._rows_i, self._rows_u]))),
            shape=(self._dim, self._dim))
        csr = coo.tocsr()
        self._csr_perm = np.asarray(csr.data, dtype=np.int64) - 1
        self._csr_indices = csr.indices
        self._csr_indptr = csr.indptr

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def num_users(self) -> int:
        return self._m

    def predictions(self, V: Factor) -> np.ndarray:
        self._check_rows(V)
        ve = V.entries
        return np.einsum("ij,ij->i", ve[self._rows_u], ve[self._rows_i])

    def _residuals(self, V: Factor) -> np.ndarray:
        return self.predictions(V) - self.ratings.values

    def _sparse_grad(self, resid: np.ndarray) -> scipy.sparse.csr_matrix:
        data = np.concatenate([2.0 * resid, 2.0 * resid])[self._csr_perm]
        return scipy.sparse.csr_matrix(
            (data, self._csr_indices, self._csr_indptr),
            shape=(self._dim, self._dim))

    def value(self, V: Factor) -> float:
        r = self._residuals(V)
        return 2.0 * float(r @ r)

    def grad_factor(self, V: Factor) -> np.ndarray:
        grad = self._sparse_grad(self._residuals(V))
        return 2.0 * (grad @ V.entries)

    def neg_grad_operator(self, V: Factor) -> SymOperator:
        grad = self._sparse_grad(self._residuals(V))

        def apply(x):
            return -(grad @ x)

        return SymOperator(dim=self._dim, apply=apply)

    def grad_dot_x(self, V: Factor) -> float:
        r = self._residuals(V)
        pred = r + self.ratings.values
        return 4.0 * float(r @ pred)

    def restricted_value(self, V: Factor, v: np.ndarray):
        # residual(a, b) = a * pred + b * cross - y is affine in (a, b), so
        # the sum of squares reduces to a fixed quadratic form
        pred = self.predictions(V)
        v = np.asarray(v, dtype=float)
        cross = v[self._rows_u] * v[self._rows_i]
        y = self.ratings.values
        pp, cc, pc = float(pred @ pred), float(cross @ cross), float(pred @ cross)
        py, cy, yy = float(pred @ y), float(cross @ y), float(y @ y)

        def phi(a: float, b: float) -> float:
            return 2.0 * (a * a * pp + 2.0 * a * b * pc + b * b * cc
                          - 2.0 * a * py - 2.0 * b * cy + yy)

        return phi


# ---------------------------------------------------------------------------
# Metric learning (Lagrangian form)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricProblem:
    """Pairwise constraints for Mahalanobis metric learning.

    ``similar`` and ``dissimilar`` hold unordered index pairs, each counted
    once.  ``lam`` weighs the dissimilar-distance reward; ``floor_delta``
    floors the distance in the gradient denominator where the square root
    is not differentiable.
    """

    points: np.ndarray
    similar: np.ndarray
    dissimilar: np.ndarray
    lam: float = 1.0
    floor_delta: float = 1e-12

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        sim = np.asarray(self.similar, dtype=np.int64).reshape(-1, 2)
        dis = np.asarray(self.dissimilar, dtype=np.int64).reshape(-1, 2)
        n = pts.shape[0]
        if self.lam <= 0:
            raise InvalidInputError("lam must be positive")
        if self.floor_delta <= 0:
            raise InvalidInputError("floor_delta must be positive")
        if sim.size == 0 and dis.size == 0:
            raise InvalidInputError("need at least one similar or dissimilar pair")
        for name, pairs in (("similar", sim), ("dissimilar", dis)):
            if pairs.size:
                if pairs.min() < 0 or pairs.max() >= n:
                    raise InvalidInputError(f"{name} pair index out of range")
                if np.any(pairs[:, 0] == pairs[:, 1]):
                    raise InvalidInputError(f"{name} pair with i == j")
        if sim.size and dis.size:
            key = lambda p: np.minimum(p[:, 0], p[:, 1]) * n + np.maximum(p[:, 0], p[:, 1])
            if np.intersect1d(key(sim), key(dis)).size:
                raise InvalidInputError("similar and dissimilar sets overlap")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "similar", sim)
        object.__setattr__(self, "dissimilar", dis)


class MetricObjective(Objective):
    """sum_S d_A(i,j)^2 - lam * sum_Sbar d_A(i,j) over A = V V'.

    d_A(i,j) = ||V' (x_i - x_j)||, so distances are nonnegative by
    construction.  The gradient of the square-root term divides by
    max(d, floor_delta).
    """

    def __init__(self, problem: MetricProblem):
        self.problem = problem
        pts = problem.points
        self._qs = pts[problem.similar[:, 0]] - pts[problem.similar[:, 1]]
        self._qd = pts[problem.dissimilar[:, 0]] - pts[problem.dissimilar[:, 1]]
        self._cs = self._qs.T @ self._qs  # sum of q q' over similar pairs
        self._d = pts.shape[1]

    @property
    def dim(self) -> int:
        return self._d

    def _dis_dists(self, V: Factor) -> np.ndarray:
        proj = self._qd @ V.entries
        return np.sqrt(np.einsum("ij,ij->i", proj, proj))

    def value(self, V: Factor) -> float:
        self._check_rows(V)
        proj_s = self._qs @ V.entries
        sim_term = float(np.sum(proj_s * proj_s))
        dis_term = float(np.sum(self._dis_dists(V)))
        return sim_term - self.problem.lam * dis_term

    def _dis_coeffs(self, V: Factor) -> np.ndarray:
        d = self._dis_dists(V)
        return (self.problem.lam / 2.0) / np.maximum(d, self.problem.floor_delta)

    def grad_factor(self, V: Factor) -> np.ndarray:
        self._check_rows(V)
        ve = V.entries
        out = 2.0 * (self._cs @ ve)
        if len(self._qd):
            c = self._dis_coeffs(V)
            out -= 2.0 * (self._qd.T @ (c[:, None] * (self._qd @ ve)))
        return out

    def neg_grad_operator(self, V: Factor) -> SymOperator:
        self._check_rows(V)
        cs = self._cs
        qd = self._qd
        c = self._dis_coeffs(V) if len(qd) else None

        def apply(x):
            out = -(cs @ x)
            if c is not None:
                out += qd.T @ (c * (qd @ x))
            return out

        return SymOperator(dim=self._d, apply=apply)

    def grad_dot_x(self, V: Factor) -> float:
        self._check_rows(V)
        proj_s = self._qs @ V.entries
        out = float(np.sum(proj_s * proj_s))
        if len(self._qd):
            d = self._dis_dists(V)
            out -= (self.problem.lam / 2.0) * float(
                np.sum(d * d / np.maximum(d, self.problem.floor_delta)))
        return out

    def restricted_value(self, V: Factor, v: np.ndarray):
        # squared distances are affine in (a, b); the square roots keep the
        # dissimilar sum from reducing further
        self._check_rows(V)
        v = np.asarray(v, dtype=float)
        proj_s = self._qs @ V.entries
        sim_x = float(np.sum(proj_s * proj_s))
        qsv = self._qs @ v
        sim_vv = float(qsv @ qsv)
        proj_d = self._qd @ V.entries
        dis_x = np.einsum("ij,ij->i", proj_d, proj_d)
        dis_vv = (self._qd @ v) ** 2
        lam = self.problem.lam

        def phi(a: float, b: float) -> float:
            dis = np.sqrt(np.maximum(a * dis_x + b * dis_vv, 0.0))
            return a * sim_x + b * sim_vv - lam * float(np.sum(dis))

        return phi

    def constrained_form_value(self, V: Factor) -> float:
        """Objective of the constrained formulation after rescaling A so the
        dissimilar distances sum to one (how solution quality is reported)."""
        total_dis = float(np.sum(self._dis_dists(V)))
        if total_dis <= 0:
            return float("inf")
        proj_s = self._qs @ V.entries
        return float(np.sum(proj_s * proj_s)) / total_dis ** 2


# ---------------------------------------------------------------------------
# Sparse PCA relaxation with Huber smoothing and trace normalization
# ---------------------------------------------------------------------------

def huber(x, m: float):
    """Scaled Huber loss: x^2 inside [-m, m], 2 m |x| - m^2 outside."""
    if m <= 0:
        raise InvalidInputError("huber scale must be positive")
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) <= m, x * x, 2.0 * m * np.abs(x) - m * m)
    return out if out.ndim else float(out)


def huber_grad(x, m: float):
    """Derivative of ``huber``: 2x inside [-m, m], 2 m sign(x) outside."""
    if m <= 0:
        raise InvalidInputError("huber scale must be positive")
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) <= m, 2.0 * x, 2.0 * m * np.sign(x))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SpcaProblem:
    """Covariance matrix with sparsity weight rho and Huber scale."""

    covariance: np.ndarray
    rho: float = 0.2
    huber_m: float = 1e-6

    def __post_init__(self):
        cov = _check_symmetric(self.covariance, "covariance")
        if self.rho <= 0:
            raise InvalidInputError("rho must be positive")
        if self.huber_m <= 0:
            raise InvalidInputError("huber_m must be positive")
        object.__setattr__(self, "covariance", cov)


class SparsePcaObjective(Objective):
    """F(X) = rho * sum_ij H(Y_ij) - A . Y with Y = X / Tr(X).

    F is invariant under positive scaling of X and is undefined at X = 0,
    so the factor is renormalized to a fixed trace after every solver
    update and initialization starts from the top eigenvector of A.
    By the same invariance, grad_F(X) . X = 0 identically.
    """

    def __init__(self, problem: SpcaProblem):
        self.problem = problem

    @property
    def dim(self) -> int:
        return self.problem.covariance.shape[0]

    def _normalized(self, V: Factor):
        self._check_rows(V)
        tau = V.trace()
        if tau <= 0:
            raise DomainError("trace-normalized objective is undefined at X = 0")
        y = (V.entries @ V.entries.T) / tau
        return tau, y

    def value(self, V: Factor) -> float:
        _, y = self._normalized(V)
        pen = float(np.sum(huber(y, self.problem.huber_m)))
        return self.problem.rho * pen - float(np.vdot(self.problem.covariance, y))

    def original_form_value(self, V: Factor) -> float:
        """Value with the absolute-value penalty instead of its smoothing."""
        _, y = self._normalized(V)
        return (self.problem.rho * float(np.sum(np.abs(y)))
                - float(np.vdot(self.problem.covariance, y)))

    def _grad_matrix(self, V: Factor) -> np.ndarray:
        tau, y = self._normalized(V)
        g = self.problem.rho * huber_grad(y, self.problem.huber_m) - self.problem.covariance
        gy = float(np.vdot(g, y))
        return (g - gy * np.eye(self.dim)) / tau

    def grad_factor(self, V: Factor) -> np.ndarray:
        return 2.0 * (self._grad_matrix(V) @ V.entries)

    def neg_grad_operator(self, V: Factor) -> SymOperator:
        neg = -self._grad_matrix(V)
        return SymOperator(dim=self.dim, apply=lambda x: neg @ x)

    def grad_dot_x(self, V: Factor) -> float:
        self._check_rows(V)
        if V.trace() <= 0:
            raise DomainError("trace-normalized objective is undefined at X = 0")
        return 0.0  # Euler identity for a 0-homogeneous function

    def restricted_value(self, V: Factor, v: np.ndarray):
        self._check_rows(V)
        v = np.asarray(v, dtype=float)
        x = V.entries @ V.entries.T
        vv = np.outer(v, v)
        tau_x = V.trace()
        tau_v = float(v @ v)
        a_mat = self.problem.covariance
        rho, m = self.problem.rho, self.problem.huber_m

        def phi(a: float, b: float) -> float:
            tau = a * tau_x + b * tau_v
            if tau <= 0:
                raise DomainError("trace-normalized objective is undefined at X = 0")
            y = (a * x + b * vv) / tau
            return rho * float(np.sum(huber(y, m))) - float(np.vdot(a_mat, y))

        return phi

    def initial_factor(self, trace_bound: float) -> Factor:
        top = dense_max_eigpair(self.problem.covariance)
        return Factor.from_vector(top.vector,
                                  scale=np.sqrt(min(trace_bound, 1.0)))

    def renormalize(self, V: Factor, trace_bound: float) -> Factor:
        tau = V.trace()
        if tau <= 0:
            raise DomainError("trace-normalized objective is undefined at X = 0")
        target = min(trace_bound, 1.0)
        return V.scaled(np.sqrt(target / tau))
