"""Experiment harness: solver comparisons, precision-switch sweeps,
restart-length sweeps, right-hand-side sweeps, and a timed fp32-vs-fp64
sparse matvec benchmark classified against the cache-reuse model.

Wall-clock numbers are reported, never asserted: they are machine
dependent. Everything else (iteration counts, residual histories, CSV
layouts) is deterministic for a fixed configuration and seed.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .core import (FP32, FP64, CsrMatrix, convert_matrix, convert_vector,
                   deterministic_kernels)
from .gen import RhsSpec, generate, make_rhs
from .io import (ConfigError, RunConfig, SolverKind, load_matrix_market,
                 write_convergence_csv, write_summary_csv)
from .precond import (Permutation, build_block_jacobi, build_poly_precond,
                      rcm_reorder)
from .solvers import SolveReport, StopCriteria, gmres_fd, gmres_ir, gmres_restarted
from .spmv import predicted_speedup, spmv

__all__ = [
    "Quadrant",
    "SpmvBenchResult",
    "spmv_bench",
    "classify_speedup",
    "run_experiment",
    "sweep_switch_point",
    "sweep_restart",
    "sweep_rhs",
]

# classification thresholds: row-regular matrices below this width are the
# ones that can reach high fp32 speedup
MAX_ROW_NNZ_THRESHOLD = 15
SPEEDUP_THRESHOLD = 1.7

DEFAULT_WARMUP = 50


class Quadrant(Enum):
    TOP_LEFT = "top-left"
    TOP_RIGHT = "top-right"
    BOTTOM_LEFT = "bottom-left"
    BOTTOM_RIGHT = "bottom-right"


@dataclass
class SpmvBenchResult:
    name: str
    n: int
    nnz: int
    max_nnz_row: int
    t_fp64: float
    t_fp32: float
    measured_speedup: float
    predicted: float
    quadrant: Quadrant


def classify_speedup(result: SpmvBenchResult) -> Quadrant:
    """Quadrant from (max nonzeros in a row, measured speedup).

    Left means strictly fewer than 15 nonzeros in the densest row; top
    means speedup of at least 1.7.
    """
    left = result.max_nnz_row < MAX_ROW_NNZ_THRESHOLD
    top = result.measured_speedup >= SPEEDUP_THRESHOLD
    if top:
        return Quadrant.TOP_LEFT if left else Quadrant.TOP_RIGHT
    return Quadrant.BOTTOM_LEFT if left else Quadrant.BOTTOM_RIGHT


def spmv_bench(A: CsrMatrix, reps: int = 1000, trials: int = 3, seed: int = 0,
               *, warmup: int = DEFAULT_WARMUP, name: str = "") -> SpmvBenchResult:
    """Time repeated sparse products in fp64 and fp32 on a random vector.

    Runs an untimed warm-up loop, then ``trials`` timed batches of ``reps``
    calls per precision, keeping the minimum batch time. The same seeded
    vector is used for both precisions (narrowed for fp32).
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    A64 = A if A.precision is FP64 else convert_matrix(A, FP64)
    A32 = convert_matrix(A64, FP32)
    x64 = np.random.default_rng(seed).standard_normal(A.n_cols)
    x32 = convert_vector(x64, FP32)
    times = {}
    with deterministic_kernels():
        for _ in range(warmup):
            spmv(A64, x64)
            spmv(A32, x32)
        for key, mat, vec in (("fp64", A64, x64), ("fp32", A32, x32)):
            best = np.inf
            for _ in range(trials):
                t0 = time.perf_counter()
                for _ in range(reps):
                    spmv(mat, vec)
                best = min(best, time.perf_counter() - t0)
            times[key] = best
    w = A.nnz / A.n_rows if A.n_rows else 0.0
    result = SpmvBenchResult(
        name=name, n=A.n_rows, nnz=A.nnz, max_nnz_row=A.max_row_nnz(),
        t_fp64=times["fp64"], t_fp32=times["fp32"],
        measured_speedup=times["fp64"] / times["fp32"],
        predicted=predicted_speedup(w) if w >= 1 else float("nan"),
        quadrant=Quadrant.TOP_LEFT)
    result.quadrant = classify_speedup(result)
    return result


# ---------------------------------------------------------------------------
# experiment plumbing


@dataclass
class _Problem:
    name: str
    A: CsrMatrix
    b: np.ndarray
    perm: Permutation | None


def _build_problem(config: RunConfig) -> _Problem:
    if config.matrix:
        A = load_matrix_market(config.matrix)
        name = os.path.splitext(os.path.basename(config.matrix))[0]
    else:
        A = generate(config.gen)
        name = config.gen.name
    rhs = config.rhs if config.rhs.seed == config.seed else \
        replace(config.rhs, seed=config.seed)
    b = make_rhs(rhs, A.n_rows)
    perm = None
    if config.rcm:
        perm, A = rcm_reorder(A)
        b = perm.apply(b)
    return _Problem(name, A, b, perm)


def _build_precond(config: RunConfig, A: CsrMatrix, precision):
    spec = config.precond
    if spec.kind == "none":
        return None
    At = A if A.precision is precision else convert_matrix(A, precision)
    if spec.kind == "poly":
        return build_poly_precond(At, spec.param, seed=config.seed)
    return build_block_jacobi(At, spec.param)


def _criteria(config: RunConfig) -> StopCriteria:
    return StopCriteria(rtol=config.rtol, max_iters=config.max_iters, m=config.m)


def _solve_once(config: RunConfig, problem: _Problem) -> SolveReport:
    A, b = problem.A, problem.b
    criteria = _criteria(config)
    kind = config.solver
    if kind is SolverKind.DOUBLE:
        precond = _build_precond(config, A, FP32 if config.precond_fp32 else FP64)
        report = gmres_restarted(A, b, criteria=criteria, precond=precond,
                                 precision=FP64)
    elif kind is SolverKind.SINGLE:
        precond = _build_precond(config, A, FP32)
        report = gmres_restarted(A, b, criteria=criteria, precond=precond,
                                 precision=FP32)
    elif kind is SolverKind.IR:
        precond = _build_precond(config, A, FP32)
        report = gmres_ir(A, b, criteria=criteria, precond_fp32=precond)
    elif kind is SolverKind.FD:
        if config.precond.kind != "none":
            raise ConfigError("the precision-switching solver does not take a preconditioner")
        report = gmres_fd(A, b, criteria=criteria, switch_iter=config.switch_iter)
    else:  # pragma: no cover
        raise ConfigError(f"unknown solver {kind}")
    if problem.perm is not None:
        report.x = problem.perm.invert_apply(report.x)
    return report


def run_experiment(config: RunConfig, out_dir: str | None = None,
                   repeats: int = 3) -> SolveReport:
    """Run the configured solver ``repeats`` times, keep the median-time run.

    Writes the convergence history and a one-row summary CSV when an output
    directory is given (either the argument or ``config.out``).
    """
    config.validate()
    problem = _build_problem(config)
    reports = [_solve_once(config, problem) for _ in range(repeats)]
    reports.sort(key=lambda rep: rep.total_time)
    report = reports[len(reports) // 2]
    out = out_dir or config.out
    if out:
        os.makedirs(out, exist_ok=True)
        tag = f"{problem.name.replace(':', '_')}_{config.solver.value}"
        write_convergence_csv(report, os.path.join(out, f"convergence_{tag}.csv"))
        write_summary_csv([summary_row(problem, config, report)],
                          os.path.join(out, f"summary_{tag}.csv"))
    return report


def summary_row(problem: _Problem, config: RunConfig, report: SolveReport) -> dict:
    return {
        "name": problem.name,
        "n": problem.A.n_rows,
        "nnz": problem.A.nnz,
        "solver": config.solver.value,
        "precond": str(config.precond),
        "time_s": repr(report.total_time),
        "iters": report.total_iters,
        "converged": report.converged,
        "loss_of_accuracy": report.loss_of_accuracy,
    }


# ---------------------------------------------------------------------------
# sweeps


def _write_rows(rows: list[dict], fields: list[str], path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


SWITCH_FIELDS = ["solver", "switch_iter", "total_iters", "iters_fp32",
                 "iters_fp64", "converged", "time_s"]


def sweep_switch_point(config: RunConfig, switch_points: list[int],
                       out_dir: str | None = None) -> list[dict]:
    """One precision-switching run per switch point, plus fp64 and
    refinement baselines. Rows are deterministic except the time column."""
    config.validate()
    problem = _build_problem(config)
    criteria = _criteria(config)
    rows = []
    base = gmres_restarted(problem.A, problem.b, criteria=criteria, precision=FP64)
    rows.append(_switch_row("double", "", base))
    ir = gmres_ir(problem.A, problem.b, criteria=criteria)
    rows.append(_switch_row("ir", "", ir))
    for sp in switch_points:
        if sp % config.m:
            raise ConfigError(f"switch point {sp} is not a multiple of m={config.m}")
        rep = gmres_fd(problem.A, problem.b, criteria=criteria, switch_iter=sp)
        rows.append(_switch_row("fd", sp, rep))
    out = out_dir or config.out
    if out:
        _write_rows(rows, SWITCH_FIELDS,
                    os.path.join(out, f"sweep_switch_{problem.name.replace(':', '_')}.csv"))
    return rows


def _switch_row(solver: str, switch_iter, report: SolveReport) -> dict:
    return {
        "solver": solver,
        "switch_iter": switch_iter,
        "total_iters": report.total_iters,
        "iters_fp32": report.iters_fp32,
        "iters_fp64": report.iters_fp64,
        "converged": report.converged,
        "time_s": repr(report.total_time),
    }


RESTART_FIELDS = ["m", "iters_double", "time_double", "iters_ir", "time_ir",
                  "speedup"]


def sweep_restart(config: RunConfig, sizes: list[int],
                  out_dir: str | None = None) -> list[dict]:
    """fp64 and refinement solves at each restart length."""
    config.validate()
    problem = _build_problem(config)
    rows = []
    for m in sizes:
        criteria = StopCriteria(rtol=config.rtol, max_iters=config.max_iters, m=m)
        dbl = gmres_restarted(problem.A, problem.b, criteria=criteria, precision=FP64)
        ir = gmres_ir(problem.A, problem.b, criteria=criteria)
        rows.append({
            "m": m,
            "iters_double": dbl.total_iters,
            "time_double": repr(dbl.total_time),
            "iters_ir": ir.total_iters,
            "time_ir": repr(ir.total_time),
            "speedup": repr(dbl.total_time / ir.total_time if ir.total_time else
                            float("nan")),
            "converged_double": dbl.converged,
            "converged_ir": ir.converged,
        })
    out = out_dir or config.out
    if out:
        _write_rows(rows, RESTART_FIELDS,
                    os.path.join(out, f"sweep_restart_{problem.name.replace(':', '_')}.csv"))
    return rows


RHS_FIELDS = ["rhs", "time_double", "iters_double", "time_ir", "iters_ir",
              "speedup"]


def sweep_rhs(config: RunConfig, kinds: list[RhsSpec],
              out_dir: str | None = None) -> list[dict]:
    """fp64 and refinement solves for each right-hand-side kind."""
    config.validate()
    criteria = _criteria(config)
    rows = []
    problem_name = None
    for rhs in kinds:
        cfg = replace(config, rhs=rhs)
        problem = _build_problem(cfg)
        problem_name = problem.name
        dbl = gmres_restarted(problem.A, problem.b, criteria=criteria, precision=FP64)
        ir = gmres_ir(problem.A, problem.b, criteria=criteria)
        rows.append({
            "rhs": rhs.kind.value,
            "time_double": repr(dbl.total_time),
            "iters_double": dbl.total_iters,
            "time_ir": repr(ir.total_time),
            "iters_ir": ir.total_iters,
            "speedup": repr(dbl.total_time / ir.total_time if ir.total_time else
                            float("nan")),
            "converged_double": dbl.converged,
            "converged_ir": ir.converged,
        })
    out = out_dir or config.out
    if out and problem_name:
        _write_rows(rows, RHS_FIELDS,
                    os.path.join(out, f"sweep_rhs_{problem_name.replace(':', '_')}.csv"))
    return rows
