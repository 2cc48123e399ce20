"""Command-line entry point.

Subcommands: matcomp, metric, spca, gen, probe.  Each writes a
machine-readable key/value report (stable key order) and optionally a
per-iteration trace CSV with the fixed header
``iter,f,gap,rank,alpha,beta,eig_iters,seconds``.

Exit codes: 0 success, 1 solver failure, 2 configuration or parse errors.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time

import numpy as np

from . import __version__
from .data import (gen_clusters, metric_problem_from_labels, parse_labeled_csv,
                   parse_movielens, quality_q, rmse, sparsity_and_variance,
                   split_per_user, stratified_subsample, write_labeled_csv,
                   build_covariance)
from .errors import InvalidInputError, NumericalError, ParseError, SolverError
from .objectives import (MatrixCompletionObjective, MetricObjective,
                         QuadraticObjective, SparsePcaObjective, SpcaProblem)
from .solver import (ConvergenceProbe, SolverConfig, probe_rate,
                     quad_curvature_bound, sample_curvature, solve)

TRACE_HEADER = "iter,f,gap,rank,alpha,beta,eig_iters,seconds"


class CliError(Exception):
    """Configuration problem diagnosed by a subcommand (exit code 2)."""


def _fmt(value) -> str:
    if isinstance(value, np.floating):
        value = float(value)
    elif isinstance(value, np.integer):
        value = int(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_report(path: str | None, fields: dict) -> None:
    lines = [f"{key} = {_fmt(val)}" for key, val in fields.items()]
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _write_trace(path: str, trace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRACE_HEADER + "\n")
        for rec in trace:
            fh.write(f"{rec.i},{rec.f!r},{rec.gap!r},{rec.rank},"
                     f"{rec.alpha!r},{rec.beta!r},{rec.eig_iters},"
                     f"{rec.seconds!r}\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _trace_bound(arg: str, auto_value: float) -> float:
    if arg == "auto":
        return auto_value
    try:
        t = float(arg)
    except ValueError as exc:
        raise CliError(f"--trace-bound must be a number or 'auto', got {arg!r}") from exc
    if t <= 0:
        raise CliError("--trace-bound must be positive")
    return t


def _base_report(kind: str, config: SolverConfig, result) -> dict:
    report = {
        "problem": kind,
        "version": __version__,
        "eps": config.eps,
        "eps_tilde": config.eps_tilde,
        "trace_bound": config.trace_bound,
        "max_iters": config.max_iters,
        "seed": config.seed,
        "local_search": config.local_search,
        "f_value": result.f_value,
        "gap": result.gap.gap,
        "lambda_max_clamped": result.gap.lambda_max_clamped,
        "grad_dot_x": result.gap.grad_dot_x,
        "wolfe_dual": result.gap.wolfe_dual,
        "certified_bound": result.gap.gap + config.eps_tilde * config.trace_bound,
        "rank": result.rank,
        "iterations": result.iterations,
        "converged": result.converged,
    }
    return report


# ---------------------------------------------------------------------------
# matcomp
# ---------------------------------------------------------------------------

def cmd_matcomp(args) -> int:
    if args.max_rank < 1:
        raise CliError("--max-rank must be >= 1")
    hashes = {}
    if args.train:
        parsed = parse_movielens(args.train, fmt=args.format)
        hashes["input.train.sha256"] = _sha256(args.train)
        train = parsed.ratings
        test = None
        if args.test:
            test = parse_movielens(args.test, fmt=args.format).ratings
            hashes["input.test.sha256"] = _sha256(args.test)
    else:
        parsed = parse_movielens(args.ratings, fmt=args.format)
        hashes["input.ratings.sha256"] = _sha256(args.ratings)
        split = split_per_user(parsed.ratings, train_frac=args.train_frac,
                               seed=args.split_seed)
        train, test = split.train, split.test

    objective = MatrixCompletionObjective(train)
    abs_sum = float(np.sum(np.abs(train.values)))
    auto_t = min(args.trace_cap,
                 abs_sum / np.sqrt(len(train))
                 * np.sqrt(train.num_users * train.num_items))
    t = _trace_bound(args.trace_bound, auto_t)
    config = SolverConfig(trace_bound=t, eps=args.eps, max_iters=args.max_rank,
                          seed=args.seed)

    rmse_by_rank: dict[int, float] = {}

    def callback(i, factor, record):
        if test is not None and factor.rank not in rmse_by_rank and factor.rank > 0:
            rmse_by_rank[factor.rank] = rmse(test, factor, train.num_users)
        return False

    start = time.perf_counter()
    result = solve(objective, config, callback=callback)
    elapsed = time.perf_counter() - start

    report = _base_report("matcomp", config, result)
    report["num_users"] = train.num_users
    report["num_items"] = train.num_items
    report["num_train"] = len(train)
    if test is not None:
        final_rmse = rmse(test, result.factor, train.num_users)
        report["num_test"] = len(test)
        report["metric.rmse"] = final_rmse
        for rank in sorted(rmse_by_rank):
            report[f"metric.rmse_rank_{rank}"] = rmse_by_rank[rank]
        best_rank = min(rmse_by_rank, key=rmse_by_rank.get, default=result.rank)
        best = min(rmse_by_rank.get(best_rank, final_rmse), final_rmse)
        report["metric.best_rmse"] = best
        report["metric.best_rmse_rank"] = (result.rank if best == final_rmse
                                           else best_rank)
    report.update(hashes)
    report["wall_seconds"] = elapsed
    _write_report(args.out, report)
    if args.trace_csv and result.trace is not None:
        _write_trace(args.trace_csv, result.trace)
    return 0


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------

def cmd_metric(args) -> int:
    hashes = {}
    if args.data:
        points = parse_labeled_csv(args.data)
        hashes["input.data.sha256"] = _sha256(args.data)
        if args.subsample:
            points = stratified_subsample(points, args.subsample, args.seed)
    else:
        points = gen_clusters(args.dim, args.n, args.seed)

    problem = metric_problem_from_labels(points, lam=args.lam,
                                         max_pairs=args.max_pairs,
                                         seed=args.seed)
    objective = MetricObjective(problem)
    t = _trace_bound(args.trace_bound, float(points.points.shape[1]))
    config = SolverConfig(trace_bound=t, eps=args.eps, max_iters=args.max_iters,
                          seed=args.seed)

    q_trace: list[tuple[int, float]] = []

    def callback(i, factor, record):
        q = quality_q(points, problem.similar, problem.dissimilar, factor)
        q_trace.append((i, q))
        return args.q_target is not None and q > args.q_target

    start = time.perf_counter()
    result = solve(objective, config, callback=callback)
    elapsed = time.perf_counter() - start

    report = _base_report("metric", config, result)
    report["lambda"] = args.lam
    report["num_points"] = len(points)
    report["dim"] = points.points.shape[1]
    report["num_similar"] = problem.similar.shape[0]
    report["num_dissimilar"] = problem.dissimilar.shape[0]
    report["metric.q"] = quality_q(points, problem.similar, problem.dissimilar,
                                   result.factor)
    report["metric.f_original_form"] = objective.constrained_form_value(result.factor)
    report.update(hashes)
    report["wall_seconds"] = elapsed
    _write_report(args.out, report)
    if args.trace_csv and result.trace is not None:
        _write_trace(args.trace_csv, result.trace)
    return 0


# ---------------------------------------------------------------------------
# spca
# ---------------------------------------------------------------------------

def cmd_spca(args) -> int:
    raw = np.loadtxt(args.data, delimiter="," if args.comma else None)
    hashes = {"input.data.sha256": _sha256(args.data)}
    raw = np.atleast_2d(raw)
    if args.subsample_dim:
        if args.subsample_dim > raw.shape[1]:
            raise CliError("--subsample-dim exceeds the data dimension")
        rng = np.random.default_rng(args.seed)
        cols = np.sort(rng.choice(raw.shape[1], args.subsample_dim, replace=False))
        raw = raw[:, cols]
    cov = build_covariance(raw, normalize=not args.no_normalize)
    problem = SpcaProblem(covariance=cov, rho=args.rho, huber_m=args.huber_m)
    objective = SparsePcaObjective(problem)
    t = _trace_bound(args.trace_bound, 1.0)
    config = SolverConfig(trace_bound=t, eps=args.eps, max_iters=args.max_iters,
                          seed=args.seed)

    start = time.perf_counter()
    result = solve(objective, config)
    elapsed = time.perf_counter() - start

    sparsity, variance = sparsity_and_variance(cov, result.factor,
                                               zero_tol=args.zero_tol)
    report = _base_report("spca", config, result)
    report["rho"] = args.rho
    report["huber_m"] = args.huber_m
    report["dim"] = cov.shape[0]
    # the run optimizes the smoothed penalty; quality is reported on the
    # original absolute-value form
    report["metric.f_original_form"] = objective.original_form_value(result.factor)
    report["metric.sparsity"] = sparsity
    report["metric.variance"] = variance
    report.update(hashes)
    report["wall_seconds"] = elapsed
    _write_report(args.out, report)
    if args.trace_csv and result.trace is not None:
        _write_trace(args.trace_csv, result.trace)
    return 0


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    data = gen_clusters(args.dim, args.n, args.seed)
    write_labeled_csv(args.data_out, data)
    report = {
        "problem": "gen",
        "version": __version__,
        "dim": args.dim,
        "n": args.n,
        "seed": args.seed,
        "out": args.data_out,
        "output.data.sha256": _sha256(args.data_out),
    }
    _write_report(args.out, report)
    return 0


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------

def cmd_probe(args) -> int:
    if args.iters < 1:
        raise CliError("--iters must be >= 1")
    rng = np.random.default_rng(args.seed)
    b = rng.standard_normal((args.n, args.n))
    b = 0.5 * (b + b.T)
    objective = QuadraticObjective(b)
    t = 1.25 * objective.optimal_trace() + 1.0
    c_f = quad_curvature_bound(t)
    sampled = sample_curvature(objective, t, n_samples=100, seed=args.seed)
    # 6 C_f / (iters + 2): small enough that a gap-rule stop certifies the
    # frozen tail below every remaining bound point (h <= 1.25 eps), large
    # enough that eps/(4t) stays within the schedule's tolerance budget
    eps = 6.0 * c_f / (args.iters + 2)
    config = SolverConfig(trace_bound=t, eps=eps, max_iters=args.iters,
                          local_search=False, seed=args.seed)
    probe = ConvergenceProbe(curvature_bound=c_f)

    start = time.perf_counter()
    points = probe_rate(objective, config, probe)
    elapsed = time.perf_counter() - start

    violations = [p for p in points if p.i >= 1 and p.primal_error > p.bound]
    if args.series_csv:
        with open(args.series_csv, "w", encoding="utf-8") as fh:
            fh.write("i,primal_error,bound\n")
            for p in points:
                fh.write(f"{p.i},{p.primal_error!r},{p.bound!r}\n")
    report = {
        "problem": "probe",
        "version": __version__,
        "n": args.n,
        "seed": args.seed,
        "iters": args.iters,
        "trace_bound": t,
        "eps": eps,
        "curvature_bound": c_f,
        "curvature_sampled": sampled,
        "violations": len(violations),
        "max_error_over_bound": max((p.primal_error / p.bound
                                     for p in points if p.i >= 1), default=0.0),
        "wall_seconds": elapsed,
    }
    _write_report(args.out, report)
    return 1 if violations else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psdopt",
        description="Hybrid rank-one / quasi-Newton solver over the PSD cone")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, eps_default):
        p.add_argument("--eps", type=float, default=eps_default,
                       help="target duality gap")
        p.add_argument("--trace-bound", default="auto",
                       help="trace bound t, or 'auto' for the per-problem heuristic")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None,
                       help="report path (default: stdout)")
        p.add_argument("--trace-csv", default=None,
                       help="per-iteration trace CSV path")

    p = sub.add_parser("matcomp", help="matrix completion on rating data")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--train", help="training ratings file")
    src.add_argument("--ratings", help="full ratings file to split per user")
    p.add_argument("--test", help="held-out ratings file (with --train)")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--format", choices=["tab", "double-colon"], default="tab")
    p.add_argument("--max-rank", type=int, default=10,
                   help="outer iteration cap; rank grows by at most 1 per iteration")
    p.add_argument("--trace-cap", type=float, default=1e7,
                   help="cap for the automatic trace-bound heuristic")
    add_common(p, eps_default=1e-3)
    p.set_defaults(func=cmd_matcomp)

    p = sub.add_parser("metric", help="Mahalanobis metric learning")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="labeled CSV (features..., label)")
    src.add_argument("--synthetic", action="store_true",
                     help="generate the two-cluster synthetic data")
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--q-target", type=float, default=None,
                   help="stop once the quality measure exceeds this value")
    p.add_argument("--max-pairs", type=int, default=None)
    p.add_argument("--subsample", type=int, default=None,
                   help="stratified subsample size for --data")
    p.add_argument("--max-iters", type=int, default=50)
    add_common(p, eps_default=1e-6)
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("spca", help="sparse PCA relaxation")
    p.add_argument("--data", required=True, help="raw data matrix (rows = samples)")
    p.add_argument("--comma", action="store_true",
                   help="data file is comma-separated (default: whitespace)")
    p.add_argument("--rho", type=float, default=0.2)
    p.add_argument("--huber-m", type=float, default=1e-6)
    p.add_argument("--subsample-dim", type=int, default=None)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--zero-tol", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=50)
    add_common(p, eps_default=1e-7)
    p.set_defaults(func=cmd_spca)

    p = sub.add_parser("gen", help="write synthetic labeled data")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-out", required=True, help="CSV output path")
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("probe", help="rate-bound probe on a random quadratic")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--series-csv", default=None,
                   help="write the (i, error, bound) series here")
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.set_defaults(func=cmd_probe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (CliError, InvalidInputError, ParseError, FileNotFoundError) as exc:
        print(f"psdopt: error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, NumericalError) as exc:
        print(f"psdopt: solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
