"""Convex minimization over the PSD cone via rank-one conditional-gradient
updates with approximate eigenvector computation, interleaved with local
quasi-Newton refinement of the low-rank factor."""

__version__ = "0.1.0"

from .eig import (EigResult, SymOperator, approx_max_eigvec, dense_max_eigpair,
                  operator_from_dense)
from .errors import (DomainError, InvalidInputError, NumericalError, ParseError,
                     SolverError, StepError)
from .local_search import LsConfig, LsStep, improve
from .objectives import (Factor, MatrixCompletionObjective, MetricObjective,
                         MetricProblem, Objective, QuadraticObjective,
                         RatingSet, SparsePcaObjective, SpcaProblem, huber,
                         huber_grad)
from .solver import (ConvergenceProbe, GapReport, IterRecord, ProbePoint,
                     SolveResult, SolverConfig, StepRecord, duality_gap,
                     line_search_2d, probe_rate, quad_curvature_bound,
                     rank_one_step, sample_curvature, solve)

__all__ = [
    "EigResult", "SymOperator", "approx_max_eigvec", "dense_max_eigpair",
    "operator_from_dense",
    "DomainError", "InvalidInputError", "NumericalError", "ParseError",
    "SolverError", "StepError",
    "LsConfig", "LsStep", "improve",
    "Factor", "MatrixCompletionObjective", "MetricObjective", "MetricProblem",
    "Objective", "QuadraticObjective", "RatingSet", "SparsePcaObjective",
    "SpcaProblem", "huber", "huber_grad",
    "ConvergenceProbe", "GapReport", "IterRecord", "ProbePoint", "SolveResult",
    "SolverConfig", "StepRecord", "duality_gap", "line_search_2d", "probe_rate",
    "quad_curvature_bound", "rank_one_step", "sample_curvature", "solve",
]
