"""Restarted GMRES drivers in a single working precision, plus two
mixed-precision strategies.

``gmres_restarted`` runs fixed-length minimization cycles, trusting the
cheap rotated-system residual estimate inside a cycle and recomputing the
true residual at every restart. ``gmres_ir`` keeps the matrix and basis in
fp32 and refines in fp64 at each restart: every outer pass solves for a
correction against the current fp64 residual with one fp32 cycle.
``gmres_fd`` instead runs plain fp32 cycles up to a chosen iteration, then
promotes the iterate and finishes in fp64.

Convergence means the explicitly recomputed relative residual
``norm(b - A x) / norm(b)`` is at or below the tolerance. When a cycle's
internal estimate claims convergence that the explicit recomputation
contradicts by more than a factor of ten, the run stops and the report is
flagged ``loss_of_accuracy``: the estimate can no longer be trusted, so
further cycles would only repeat the false signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import krylov, timing
from .core import (FP32, FP64, CsrMatrix, Precision, PrecisionError, ShapeError,
                   convert_matrix, convert_vector, deterministic_kernels, gemv,
                   norm2)
from .krylov import DivergenceError
from .precond import (BlockJacobiPreconditioner, PolynomialPreconditioner,
                      apply_block_jacobi, apply_poly, cast_apply)
from .spmv import spmv

__all__ = [
    "StopCriteria",
    "SolveReport",
    "HistoryEntry",
    "CycleResult",
    "DivergenceError",
    "gmres_cycle",
    "gmres_restarted",
    "gmres_ir",
    "gmres_fd",
    "explicit_residual",
]

# explicit residual more than this factor above a claimed-converged
# implicit residual marks the claim as a false positive
LOSS_OF_ACCURACY_FACTOR = 10.0

# stall: explicit residual improves by less than 1% over two consecutive
# restarts (diagnostic; only the fp32 leg of the switching solver acts on it)
STALL_IMPROVEMENT = 0.01
STALL_RESTARTS = 2


@dataclass(frozen=True)
class StopCriteria:
    """Solve controls: relative residual tolerance, budget, restart length."""

    rtol: float = 1e-10
    max_iters: int = 100_000
    m: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.rtol < 1.0:
            raise ValueError(f"rtol must be in (0, 1), got {self.rtol}")
        if self.m < 1:
            raise ValueError("restart length must be at least 1")
        if self.max_iters < 1:
            raise ValueError("iteration budget must be at least 1")


class HistoryEntry(NamedTuple):
    iteration: int
    implicit: float
    explicit: float | None
    phase: str


@dataclass
class SolveReport:
    """Outcome of one solve.

    ``residual_history`` has one entry per iteration plus the initial one;
    explicit residuals are present at restart boundaries only.
    ``kernel_times`` maps the kernel categories (plus ``Other``) to seconds
    and partitions ``total_time``.
    """

    x: np.ndarray
    converged: bool
    total_iters: int
    iters_fp32: int
    iters_fp64: int
    residual_history: list[HistoryEntry]
    kernel_times: dict[str, float]
    loss_of_accuracy: bool
    stalled_at: int | None = None
    total_time: float = 0.0

    def best_explicit(self) -> float:
        vals = [e.explicit for e in self.residual_history if e.explicit is not None]
        return min(vals) if vals else float("inf")


class CycleResult(NamedTuple):
    x: np.ndarray
    implicit_norms: list[float]
    steps: int
    breakdown: bool


def _relative(value: float, scale: float) -> float:
    if scale > 0.0:
        return value / scale
    return 0.0 if value == 0.0 else float("inf")


def gmres_cycle(apply_a: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                x0: np.ndarray, m: int, rtol: float, *,
                m_inv: Callable[[np.ndarray], np.ndarray] | None = None,
                b_norm: float | None = None, r0: np.ndarray | None = None,
                breakdown_tol: float | None = None) -> CycleResult:
    """One restart cycle: build the subspace, minimize the residual over it.

    ``apply_a`` maps v to A@v in the working precision. With ``m_inv`` (a
    right preconditioner's inverse action) the subspace is built for the
    composed operator while the returned iterate stays in the original
    variables, so residuals remain those of the unpreconditioned problem.
    Runs at most ``m`` steps, stopping early when the implicit residual
    drops to ``rtol * b_norm`` or the subspace becomes invariant. ``r0``
    passes in an already computed initial residual (the restart loop reuses
    the explicit residual of the previous cycle).
    """
    b = np.asarray(b)
    x0 = np.asarray(x0)
    if b.shape != x0.shape:
        raise ShapeError("right-hand side and initial guess lengths differ")
    precision = Precision.of(b)
    if x0.dtype != b.dtype:
        raise PrecisionError("operands must share one precision")
    if b_norm is None:
        b_norm = norm2(b)
    if r0 is None:
        r0 = b - apply_a(x0)
    gamma = norm2(r0)
    if gamma == 0.0:
        return CycleResult(x0.copy(), [], 0, False)
    if not np.isfinite(gamma):
        raise DivergenceError("initial residual is not finite")
    op = apply_a if m_inv is None else (lambda v: apply_a(m_inv(v)))
    ws = krylov.ArnoldiWorkspace(b.shape[0], m, precision, breakdown_tol)
    ws.start(r0 / gamma, gamma)
    implicit: list[float] = []
    threshold = rtol * b_norm
    breakdown = False
    while ws.j < m:
        step = krylov.arnoldi_step(ws, op)
        res = krylov.givens_update(ws.hls, ws.j - 1)
        implicit.append(res)
        if step.breakdown:
            breakdown = True
            break
        if res <= threshold:
            break
    k = ws.j
    d = krylov.solve_least_squares(ws.hls, k)
    u = gemv(ws.V[:, :k], d)
    if m_inv is not None:
        u = m_inv(u)
    return CycleResult(x0 + u, implicit, k, breakdown)


def _run_restarted(A: CsrMatrix, b: np.ndarray, x: np.ndarray,
                   criteria: StopCriteria,
                   m_inv: Callable[[np.ndarray], np.ndarray] | None,
                   phase: str, history: list[HistoryEntry],
                   iter_offset: int = 0, limit: int | None = None,
                   stop_on_stall: bool = False):
    """Shared restart loop. Appends to ``history`` and returns
    (x, converged, iterations, loss_of_accuracy, stalled_at)."""
    apply_a = lambda v: spmv(A, v)
    b_norm = norm2(b)
    rnorm, r = explicit_residual(A, b, x)
    explicit_rel = _relative(rnorm, b_norm)
    history.append(HistoryEntry(iter_offset, explicit_rel, explicit_rel, phase))
    limit = criteria.max_iters if limit is None else limit
    total = 0
    converged = explicit_rel <= criteria.rtol
    loss = False
    stalled_at = None
    stall_run = 0
    prev_rel = explicit_rel
    while not converged and not loss and total < limit:
        cycle = gmres_cycle(apply_a, b, x, min(criteria.m, limit - total),
                            criteria.rtol, m_inv=m_inv, b_norm=b_norm, r0=r)
        x = cycle.x
        for i, res in enumerate(cycle.implicit_norms[:-1]):
            history.append(HistoryEntry(iter_offset + total + i + 1,
                                        _relative(res, b_norm), None, phase))
        total += cycle.steps
        rnorm, r = explicit_residual(A, b, x)
        explicit_rel = _relative(rnorm, b_norm)
        implicit_rel = (_relative(cycle.implicit_norms[-1], b_norm)
                        if cycle.implicit_norms else explicit_rel)
        history.append(HistoryEntry(iter_offset + total, implicit_rel,
                                    explicit_rel, phase))
        if explicit_rel <= criteria.rtol:
            converged = True
        elif (implicit_rel <= criteria.rtol
              and explicit_rel > LOSS_OF_ACCURACY_FACTOR * criteria.rtol):
            loss = True
        if not converged:
            if prev_rel > 0 and (prev_rel - explicit_rel) < STALL_IMPROVEMENT * prev_rel:
                stall_run += 1
            else:
                stall_run = 0
            if stall_run >= STALL_RESTARTS:
                if stalled_at is None:
                    stalled_at = iter_offset + total
                if stop_on_stall:
                    break
            prev_rel = explicit_rel
    return x, converged, total, loss, stalled_at


def _precond_closure(precond, A: CsrMatrix,
                     precision: Precision) -> Callable | None:
    """Inverse action of a right preconditioner in the solve precision."""
    if precond is None:
        return None
    if precond.precision is precision:
        if isinstance(precond, PolynomialPreconditioner):
            return lambda v: apply_poly(precond, A, v)
        if isinstance(precond, BlockJacobiPreconditioner):
            return lambda v: apply_block_jacobi(precond, v)
        raise TypeError(f"unsupported preconditioner type {type(precond).__name__}")
    if precond.precision is FP32 and precision is FP64:
        A32 = convert_matrix(A, FP32) if isinstance(precond, PolynomialPreconditioner) else None
        return lambda v: cast_apply(precond, A32, v)
    raise PrecisionError("an fp64 preconditioner cannot run inside an fp32 solve")


def _phase_of(precision: Precision) -> str:
    return "fp32" if precision is FP32 else "fp64"


def gmres_restarted(A: CsrMatrix, b: np.ndarray, x0: np.ndarray | None = None,
                    criteria: StopCriteria | None = None, precond=None,
                    precision: Precision | None = None, *,
                    timer: timing.KernelTimer | None = None,
                    stop_on_stall: bool = False) -> SolveReport:
    """Restarted GMRES in one working precision.

    Inputs are converted to ``precision`` (default: the matrix's own) up
    front; the preconditioner must either match that precision or be fp32
    inside an fp64 solve, in which case each application narrows and
    widens its operand. Exhausting ``criteria.max_iters`` yields an
    unconverged report, not an exception.
    """
    criteria = criteria or StopCriteria()
    precision = precision or A.precision
    if A.precision is not precision:
        A = convert_matrix(A, precision)
    b = np.asarray(b)
    if Precision.of(b) is not precision:
        b = convert_vector(b, precision)
    x = np.zeros(A.n_cols, dtype=precision.dtype) if x0 is None else np.asarray(x0)
    if Precision.of(x) is not precision:
        x = convert_vector(x, precision)
    m_inv = _precond_closure(precond, A, precision)
    timer = timer if timer is not None else timing.KernelTimer()
    history: list[HistoryEntry] = []
    phase = _phase_of(precision)
    with deterministic_kernels(), timing.active(timer):
        x, converged, total, loss, stalled_at = _run_restarted(
            A, b, x, criteria, m_inv, phase, history,
            stop_on_stall=stop_on_stall)
    fp32 = precision is FP32
    return SolveReport(
        x=convert_vector(x, FP64) if fp32 else x,
        converged=converged,
        total_iters=total,
        iters_fp32=total if fp32 else 0,
        iters_fp64=0 if fp32 else total,
        residual_history=history,
        kernel_times=timer.breakdown(),
        loss_of_accuracy=loss,
        stalled_at=stalled_at,
        total_time=timer.total,
    )


def gmres_ir(A: CsrMatrix, b: np.ndarray, x0: np.ndarray | None = None,
             criteria: StopCriteria | None = None, precond_fp32=None, *,
             timer: timing.KernelTimer | None = None) -> SolveReport:
    """Iterative refinement: fp32 correction cycles, fp64 residual updates.

    Each outer pass solves ``A u = r`` for one fp32 restart cycle against
    the current fp64 residual r, rescaled to unit norm before narrowing so
    the inner right-hand side never underflows as r shrinks, then applies
    the correction and recomputes r in fp64. The fp32 copy of the matrix is
    made up front and excluded from the reported solve time; the per-pass
    vector casts are included. Convergence is only observed at restart
    boundaries, so the count can overshoot the minimum by up to m - 1
    iterations.
    """
    criteria = criteria or StopCriteria()
    if A.precision is not FP64:
        raise PrecisionError("iterative refinement expects the matrix in fp64")
    b = np.asarray(b)
    if Precision.of(b) is not FP64:
        raise PrecisionError("iterative refinement expects an fp64 right-hand side")
    x = np.zeros(A.n_cols, dtype=np.float64) if x0 is None else \
        np.asarray(x0, dtype=np.float64).copy()
    if precond_fp32 is not None and precond_fp32.precision is not FP32:
        raise PrecisionError("the inner preconditioner must be fp32")
    A32 = convert_matrix(A, FP32)
    m_inv32 = _precond_closure(precond_fp32, A32, FP32)
    apply32 = lambda v: spmv(A32, v)
    timer = timer if timer is not None else timing.KernelTimer()
    history: list[HistoryEntry] = []
    zero32 = np.zeros(A.n_cols, dtype=np.float32)
    with deterministic_kernels(), timing.active(timer):
        with timing.suspended():
            b_norm = norm2(b)
            rnorm, r = explicit_residual(A, b, x)
        explicit_rel = _relative(rnorm, b_norm)
        history.append(HistoryEntry(0, explicit_rel, explicit_rel, "fp32"))
        total = 0
        converged = explicit_rel <= criteria.rtol
        stalled_at = None
        stall_run = 0
        prev_rel = explicit_rel
        while not converged and total < criteria.max_iters:
            rho = rnorm
            with timing.suspended():
                r32 = convert_vector(r / rho, FP32)
            try:
                cycle = gmres_cycle(apply32, r32, zero32,
                                    min(criteria.m, criteria.max_iters - total),
                                    criteria.rtol, m_inv=m_inv32, r0=r32)
            except DivergenceError as exc:
                raise DivergenceError(
                    f"fp32 correction solve diverged after {total} iterations: {exc}"
                ) from exc
            if not np.all(np.isfinite(cycle.x)):
                raise DivergenceError(
                    f"fp32 correction is not finite after {total} iterations")
            scale = rho / b_norm if b_norm > 0 else 1.0
            for i, res in enumerate(cycle.implicit_norms[:-1]):
                history.append(HistoryEntry(total + i + 1, res * scale, None, "fp32"))
            with timing.suspended():
                x = x + rho * convert_vector(cycle.x, FP64)
                rnorm, r = explicit_residual(A, b, x)
            total += cycle.steps
            explicit_rel = _relative(rnorm, b_norm)
            implicit_rel = (cycle.implicit_norms[-1] * scale
                            if cycle.implicit_norms else explicit_rel)
            history.append(HistoryEntry(total, implicit_rel, explicit_rel, "fp32"))
            converged = explicit_rel <= criteria.rtol
            if not converged:
                if prev_rel > 0 and (prev_rel - explicit_rel) < STALL_IMPROVEMENT * prev_rel:
                    stall_run += 1
                else:
                    stall_run = 0
                if stall_run >= STALL_RESTARTS and stalled_at is None:
                    stalled_at = total
                prev_rel = explicit_rel
    return SolveReport(
        x=x,
        converged=converged,
        total_iters=total,
        iters_fp32=total,
        iters_fp64=0,
        residual_history=history,
        kernel_times=timer.breakdown(),
        loss_of_accuracy=False,
        stalled_at=stalled_at,
        total_time=timer.total,
    )


def gmres_fd(A: CsrMatrix, b: np.ndarray, x0: np.ndarray | None = None,
             criteria: StopCriteria | None = None, switch_iter: int = 0, *,
             timer: timing.KernelTimer | None = None) -> SolveReport:
    """Single-precision leg followed by a double-precision finish.

    Runs fp32 restarted GMRES for ``switch_iter`` iterations (a multiple of
    the restart length; the leg ends sooner only if fp32 progress stalls),
    promotes the iterate to fp64, and continues restarted fp64 GMRES from
    it to the tolerance. ``switch_iter=0`` is exactly the fp64 solver.
    """
    criteria = criteria or StopCriteria()
    if switch_iter < 0 or switch_iter % criteria.m != 0:
        raise ValueError("switch_iter must be a nonnegative multiple of the restart length")
    if A.precision is not FP64:
        raise PrecisionError("the precision-switching solver expects the matrix in fp64")
    b = np.asarray(b)
    if Precision.of(b) is not FP64:
        raise PrecisionError("the precision-switching solver expects an fp64 right-hand side")
    x = np.zeros(A.n_cols, dtype=np.float64) if x0 is None else \
        np.asarray(x0, dtype=np.float64)
    timer = timer if timer is not None else timing.KernelTimer()
    history: list[HistoryEntry] = []
    iters32 = 0
    loss32 = False
    stalled_at = None
    if switch_iter > 0:
        A32 = convert_matrix(A, FP32)
        b32 = convert_vector(b, FP32)
        x32 = convert_vector(x, FP32)
        with deterministic_kernels(), timing.active(timer):
            x32, _, iters32, loss32, stalled_at = _run_restarted(
                A32, b32, x32, criteria, None, "fp32", history,
                iter_offset=0, limit=min(switch_iter, criteria.max_iters),
                stop_on_stall=True)
            x = convert_vector(x32, FP64)
        # the fp64 leg re-measures this boundary, in fp64
        if history and history[-1].iteration == iters32:
            history.pop()
    with deterministic_kernels(), timing.active(timer):
        x, converged, iters64, loss64, st64 = _run_restarted(
            A, b, x, criteria, None, "fp64", history,
            iter_offset=iters32, limit=max(criteria.max_iters - iters32, 0))
    return SolveReport(
        x=x,
        converged=converged,
        total_iters=iters32 + iters64,
        iters_fp32=iters32,
        iters_fp64=iters64,
        residual_history=history,
        kernel_times=timer.breakdown(),
        loss_of_accuracy=loss32 or loss64,
        stalled_at=stalled_at if stalled_at is not None else st64,
        total_time=timer.total,
    )


def explicit_residual(A: CsrMatrix, b: np.ndarray,
                      x: np.ndarray) -> tuple[float, np.ndarray]:
    """Recompute ``r = b - A x`` and its 2-norm in the matrix's precision."""
    b = np.asarray(b)
    x = np.asarray(x)
    if b.dtype != A.values.dtype or x.dtype != A.values.dtype:
        raise PrecisionError("residual operands must match the matrix precision")
    if b.shape != (A.n_rows,) or x.shape != (A.n_cols,):
        raise ShapeError("residual operand lengths do not match the matrix")
    r = b - spmv(A, x)
    return norm2(r), r
