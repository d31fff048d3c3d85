"""Arnoldi process with doubled classical Gram-Schmidt and the rotated
Hessenberg least-squares update.

Orthogonalization runs two full Gram-Schmidt passes per step (no adaptive
test), which restores orthogonality to working-precision levels while
keeping every pass a pair of dense matrix-vector products. The small
least-squares problem ``min |gamma*e1 - Hbar @ y|`` is maintained
incrementally with Givens rotations so each step yields the residual-norm
estimate of the current iterate for free.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .core import Precision, PrecisionError, ShapeError, gemv, norm2

__all__ = [
    "ArnoldiWorkspace",
    "HessenbergLS",
    "ArnoldiStep",
    "DivergenceError",
    "SingularHessenbergError",
    "arnoldi_step",
    "givens_update",
    "solve_least_squares",
]

DEFAULT_BREAKDOWN_FACTOR = 10.0


class DivergenceError(ArithmeticError):
    """Non-finite values appeared during the iteration (the solve is diverging)."""


class SingularHessenbergError(np.linalg.LinAlgError):
    """The rotated triangular factor has a zero diagonal (mishandled breakdown)."""


class HessenbergLS:
    """State of ``min |gamma*e1 - Hbar @ y|`` maintained under Givens rotations.

    ``H`` holds the raw Hessenberg columns from the recurrence; ``R`` holds
    the same columns after the accumulated rotations, upper triangular in
    its leading block. ``rhs`` starts as gamma*e1 and is rotated alongside,
    so after j steps ``abs(rhs[j])`` is the residual norm of the current
    least-squares minimizer; it never increases with j.
    """

    def __init__(self, m: int, precision: Precision) -> None:
        dt = precision.dtype
        self.m = m
        self.H = np.zeros((m + 1, m), dtype=dt)
        self.R = np.zeros((m + 1, m), dtype=dt)
        self.givens_cos = np.zeros(m, dtype=dt)
        self.givens_sin = np.zeros(m, dtype=dt)
        self.rhs = np.zeros(m + 1, dtype=dt)
        self.implicit_resnorm = 0.0

    def reset(self, gamma: float) -> None:
        self.H[:] = 0
        self.R[:] = 0
        self.givens_cos[:] = 0
        self.givens_sin[:] = 0
        self.rhs[:] = 0
        self.rhs[0] = gamma
        self.implicit_resnorm = float(abs(gamma))


class ArnoldiWorkspace:
    """Single-owner mutable state for one restart cycle; not thread-safe.

    ``V`` stores the orthonormal basis columns (Fortran order, so column
    slices feed BLAS without copies); ``j`` counts completed steps.
    """

    def __init__(self, n: int, m: int, precision: Precision,
                 breakdown_tol: float | None = None) -> None:
        if m < 1:
            raise ValueError("at least one step is required")
        self.precision = precision
        self.V = np.zeros((n, m + 1), dtype=precision.dtype, order="F")
        self.hls = HessenbergLS(m, precision)
        self.j = 0
        self.broke_down = False
        if breakdown_tol is None:
            # exact-arithmetic breakdown is h=0; in floating point use a
            # small relative threshold instead
            breakdown_tol = DEFAULT_BREAKDOWN_FACTOR * precision.unit_roundoff
        self.breakdown_tol = breakdown_tol

    def start(self, v0: np.ndarray, gamma: float) -> None:
        self.V[:, 0] = v0
        self.j = 0
        self.broke_down = False
        self.hls.reset(gamma)

    def basis(self) -> np.ndarray:
        """The valid orthonormal columns of V (a breakdown step appends none)."""
        return self.V[:, : self.j + (0 if self.broke_down else 1)]


class ArnoldiStep(NamedTuple):
    h_col: np.ndarray
    h_subdiag: float
    breakdown: bool


def arnoldi_step(ws: ArnoldiWorkspace,
                 apply_op: Callable[[np.ndarray], np.ndarray]) -> ArnoldiStep:
    """Advance the basis by one vector using two Gram-Schmidt passes.

    ``apply_op`` is the subspace operator (the matrix, or matrix composed
    with a right preconditioner's inverse action). Returns the new
    Hessenberg column (coefficients summed over both passes), the
    subdiagonal entry, and whether the subspace became invariant: breakdown
    is flagged when the orthogonalized vector's norm falls below
    ``breakdown_tol`` times its pre-orthogonalization norm, in which case
    no new basis vector is appended.
    """
    j = ws.j
    if j >= ws.hls.m:
        raise ValueError("workspace already holds the maximum number of steps")
    v = ws.V[:, j]
    w = np.asarray(apply_op(v))
    if w.shape != v.shape:
        raise ShapeError(f"operator returned length {w.shape}, expected {v.shape}")
    if w.dtype != v.dtype:
        raise PrecisionError("operator changed the working precision")
    if not np.all(np.isfinite(w)):
        raise DivergenceError("operator output contains non-finite values")
    w0 = norm2(w)
    basis = ws.V[:, : j + 1]
    h = np.zeros(j + 1, dtype=w.dtype)
    for _ in range(2):
        coeffs = gemv(basis, w, transpose=True)
        w = gemv(basis, coeffs, w, alpha=-1.0, beta=1.0)
        h += coeffs
    h_sub = norm2(w)
    hls = ws.hls
    hls.H[: j + 1, j] = h
    hls.H[j + 1, j] = h_sub
    breakdown = h_sub <= ws.breakdown_tol * w0
    if not breakdown:
        ws.V[:, j + 1] = w / h_sub
    ws.broke_down = breakdown
    ws.j += 1
    return ArnoldiStep(h, float(h_sub), breakdown)


def givens_update(hls: HessenbergLS, j: int) -> float:
    """Fold the freshly filled column ``j`` into the rotated system.

    Applies the stored rotations to the column, computes one new rotation
    annihilating the subdiagonal entry, rotates the right-hand side, and
    returns the implicit residual norm ``abs(rhs[j+1])``.
    """
    col = hls.H[: j + 2, j].copy()
    cos, sin = hls.givens_cos, hls.givens_sin
    for i in range(j):
        t = cos[i] * col[i] + sin[i] * col[i + 1]
        col[i + 1] = -sin[i] * col[i] + cos[i] * col[i + 1]
        col[i] = t
    a, b = col[j], col[j + 1]
    r = np.hypot(a, b)
    if r == 0:
        # degenerate zero column: identity rotation, estimate unchanged
        cos[j] = 1.0
        sin[j] = 0.0
        hls.R[: j + 2, j] = col
        hls.implicit_resnorm = float(abs(hls.rhs[j]))
        return hls.implicit_resnorm
    c = a / r
    s = b / r
    cos[j], sin[j] = c, s
    col[j] = c * a + s * b
    col[j + 1] = 0
    hls.R[: j + 2, j] = col
    rhs = hls.rhs
    t = c * rhs[j] + s * rhs[j + 1]
    rhs[j + 1] = -s * rhs[j] + c * rhs[j + 1]
    rhs[j] = t
    hls.implicit_resnorm = float(abs(rhs[j + 1]))
    return hls.implicit_resnorm


def solve_least_squares(hls: HessenbergLS, j: int) -> np.ndarray:
    """Back-solve the rotated triangular system for the subspace coefficients.

    Requires :func:`givens_update` to have been applied through step ``j``.
    """
    if j == 0:
        return np.zeros(0, dtype=hls.R.dtype)
    R = hls.R[:j, :j]
    diag = np.abs(np.diag(R))
    if np.any(diag == 0) or not np.all(np.isfinite(diag)):
        k = int(np.argmin(np.where(np.isfinite(diag), diag, -1.0)))
        raise SingularHessenbergError(f"zero diagonal in triangular factor at step {k}")
    return scipy.linalg.solve_triangular(R, hls.rhs[:j], lower=False)
