"""Right preconditioners and reordering.

Two preconditioner families are provided. The polynomial preconditioner
approximates the inverse with the residual-minimizing polynomial extracted
from a short Arnoldi run; low degrees are stored as power-basis
coefficients and applied by Horner's rule, while high degrees are stored as
the Leja-ordered roots of the companion residual polynomial (harmonic Ritz
values) and applied in product form, which stays well conditioned where the
power basis would not. The block Jacobi preconditioner factors the dense
diagonal blocks of the matrix with partially pivoted LU and applies the
per-block solves batched across blocks.

Both can be built in either working precision; :func:`cast_apply` applies
an fp32 preconditioner inside an fp64 solve by narrowing the operand,
applying in fp32, and widening the result.

:func:`rcm_reorder` computes a reverse Cuthill-McKee permutation of the
symmetrized sparsity pattern, which packs the diagonal blocks before block
Jacobi extraction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from . import krylov
from .core import (FP32, FP64, CsrMatrix, Precision, PrecisionError, ShapeError,
                   coo_to_csr, convert_vector, deterministic_kernels, norm2)
from .spmv import spmv

__all__ = [
    "PolyBasis",
    "PolynomialPreconditioner",
    "BlockJacobiPreconditioner",
    "Permutation",
    "SingularBlockError",
    "build_poly_precond",
    "apply_poly",
    "build_block_jacobi",
    "apply_block_jacobi",
    "cast_apply",
    "rcm_reorder",
]

# power basis is fine for short polynomials; beyond this the monomial
# coefficients grow/cancel too violently and the root form takes over
POWER_DEGREE_LIMIT = 10


class SingularBlockError(np.linalg.LinAlgError):
    """A diagonal block has no LU factorization."""


class PolyBasis(Enum):
    POWER = "power"
    NEWTON_ROOTS = "newton-roots"


@dataclass(frozen=True)
class PolynomialPreconditioner:
    """Degree-d polynomial approximation to the matrix inverse.

    Power form stores the d+1 monomial coefficients; Newton form stores the
    d+1 roots of the companion residual polynomial (complex conjugate pairs
    kept adjacent). Either form costs exactly ``degree`` sparse products
    per application.
    """

    degree: int
    basis: PolyBasis
    precision: Precision
    coefficients: np.ndarray | None = None
    roots: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.basis is PolyBasis.POWER:
            if self.coefficients is None or len(self.coefficients) != self.degree + 1:
                raise ValueError("power basis needs degree + 1 coefficients")
            if not np.all(np.isfinite(self.coefficients)):
                raise ValueError("polynomial coefficients are not finite")
        else:
            if self.roots is None or len(self.roots) != self.degree + 1:
                raise ValueError("root basis needs degree + 1 roots")
            if not np.all(np.isfinite(self.roots)) or np.any(self.roots == 0):
                raise ValueError("polynomial roots must be finite and nonzero")


@dataclass(frozen=True)
class BlockJacobiPreconditioner:
    """LU-factored dense diagonal blocks of a matrix.

    The trailing block of a size that does not divide n is padded with unit
    diagonal entries, so the factor storage is uniform across blocks.
    """

    block_size: int
    n: int
    precision: Precision
    block_lu: np.ndarray   # (n_blocks, k, k)
    block_piv: np.ndarray  # (n_blocks, k)

    @property
    def n_blocks(self) -> int:
        return self.block_lu.shape[0]


@dataclass(frozen=True)
class Permutation:
    """A bijection on [0, n); ``perm[new] = old``."""

    perm: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.perm, dtype=np.int64)
        object.__setattr__(self, "perm", p)
        if not np.array_equal(np.sort(p), np.arange(len(p))):
            raise ValueError("not a permutation of 0..n-1")

    def __len__(self) -> int:
        return len(self.perm)

    def inverse_array(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Reordered copy of x: result[new] = x[old]."""
        return np.ascontiguousarray(np.asarray(x)[self.perm])

    def invert_apply(self, x: np.ndarray) -> np.ndarray:
        """Undo :meth:`apply`."""
        out = np.empty_like(np.asarray(x))
        out[self.perm] = x
        return out


# ---------------------------------------------------------------------------
# polynomial preconditioner


def build_poly_precond(A: CsrMatrix, degree: int, seed: int = 0) -> PolynomialPreconditioner:
    """Construct the residual-minimizing polynomial approximation to A's inverse.

    Runs ``degree + 1`` Arnoldi steps from a seeded random start vector and
    reads the minimizer's coefficients off the Hessenberg least-squares
    system. If the subspace becomes invariant early the polynomial of the
    achieved degree is returned with a warning (it is then exact on the
    subspace reached). Degrees up to ``POWER_DEGREE_LIMIT`` are stored in
    the power basis, higher ones as Leja-ordered harmonic Ritz roots.
    """
    if A.n_rows != A.n_cols:
        raise ShapeError("polynomial preconditioner needs a square matrix")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    precision = A.precision
    steps = degree + 1
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.n_rows).astype(precision.dtype)
    gamma = norm2(v)
    ws = krylov.ArnoldiWorkspace(A.n_rows, steps, precision)
    ws.start(v / gamma, gamma)
    with deterministic_kernels():
        for j in range(steps):
            step = krylov.arnoldi_step(ws, lambda u: spmv(A, u))
            krylov.givens_update(ws.hls, j)
            if step.breakdown:
                break
    k = ws.j
    if k < steps:
        warnings.warn(
            f"subspace became invariant after {k} steps; "
            f"polynomial degree reduced from {degree} to {k - 1}",
            stacklevel=2)
    y = krylov.solve_least_squares(ws.hls, k)
    if not np.all(np.isfinite(y)):
        raise ValueError("polynomial construction produced non-finite coefficients")
    built_degree = k - 1
    if built_degree <= POWER_DEGREE_LIMIT:
        coeffs = _power_coefficients(ws.hls.H, k, float(gamma), y)
        return PolynomialPreconditioner(built_degree, PolyBasis.POWER, precision,
                                        coefficients=coeffs.astype(precision.dtype))
    roots = _harmonic_ritz_values(ws.hls.H, k)
    roots = _leja_order(roots)
    return PolynomialPreconditioner(built_degree, PolyBasis.NEWTON_ROOTS, precision,
                                    roots=roots)


def _power_coefficients(H: np.ndarray, k: int, gamma: float, y: np.ndarray) -> np.ndarray:
    """Monomial coefficients of the minimizer from the basis recurrence.

    Basis vector j satisfies v_j = s_j(A) v_start with s_0 = 1/gamma and
    h[j+1,j] s_{j+1} = t s_j - sum_i h[i,j] s_i; the minimizer is
    sum_j y_j s_j.
    """
    H64 = H[: k + 1, :k].astype(np.float64)
    S = np.zeros((k, k))
    S[0, 0] = 1.0 / gamma
    for j in range(k - 1):
        shifted = np.zeros(k)
        shifted[1:] = S[j, :-1]
        S[j + 1] = (shifted - H64[: j + 1, j] @ S[: j + 1]) / H64[j + 1, j]
    return y.astype(np.float64) @ S


def _harmonic_ritz_values(H: np.ndarray, k: int) -> np.ndarray:
    """Roots of the residual polynomial of a k-step minimization."""
    Hk = H[:k, :k].astype(np.float64)
    h2 = float(H[k, k - 1]) ** 2
    e_k = np.zeros(k)
    e_k[-1] = 1.0
    try:
        f = scipy.linalg.solve(Hk.T, e_k)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("polynomial construction produced non-finite coefficients") from exc
    M = Hk.copy()
    M[:, -1] += h2 * f
    theta = np.linalg.eigvals(M)
    if not np.all(np.isfinite(theta)) or np.any(theta == 0):
        raise ValueError("polynomial construction produced non-finite coefficients")
    return theta


def _leja_order(roots: np.ndarray) -> np.ndarray:
    """Greedy max-product ordering, conjugate pairs kept adjacent.

    Ties break toward the lower input index so the ordering is
    deterministic.
    """
    roots = np.asarray(roots, dtype=np.complex128)
    remaining = list(range(len(roots)))
    order: list[int] = []

    def take(i: int) -> None:
        remaining.remove(i)
        order.append(i)
        if roots[i].imag != 0:
            target = np.conj(roots[i])
            partner = None
            best = math.inf
            for t in remaining:
                if roots[t].imag == 0:
                    continue
                d = abs(roots[t] - target)
                if d < best:
                    partner, best = t, d
            if partner is not None:
                remaining.remove(partner)
                order.append(partner)

    first = max(remaining, key=lambda i: (abs(roots[i]), -i))
    take(first)
    while remaining:
        chosen = roots[order]
        best_i = None
        best_v = -math.inf
        for t in remaining:
            d = np.abs(roots[t] - chosen)
            v = float(np.sum(np.log(np.maximum(d, 1e-300))))
            if v > best_v:
                best_i, best_v = t, v
        take(best_i)
    return roots[order]


def apply_poly(M: PolynomialPreconditioner, A: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Evaluate the preconditioner polynomial at A acting on x.

    Power form uses Horner's rule; root form uses the product recurrence,
    folding conjugate pairs into real quadratic updates. Exactly
    ``M.degree`` sparse products are issued either way.
    """
    x = np.asarray(x)
    if A.precision is not M.precision:
        raise PrecisionError("matrix and preconditioner precisions differ")
    if x.dtype != M.precision.dtype:
        raise PrecisionError("operand precision differs from the preconditioner's")
    if x.shape != (A.n_cols,):
        raise ShapeError("operand length does not match the matrix")
    if M.basis is PolyBasis.POWER:
        c = M.coefficients
        y = c[M.degree] * x
        for i in range(M.degree - 1, -1, -1):
            y = spmv(A, y)
            y += c[i] * x
        return y
    return _apply_newton(M.roots, A, x)


def _apply_newton(roots: np.ndarray, A: CsrMatrix, x: np.ndarray) -> np.ndarray:
    dt = x.dtype.type
    k = len(roots)
    y = np.zeros_like(x)
    prod = x.copy()
    i = 0
    while i < k:
        theta = roots[i]
        if theta.imag == 0:
            inv = dt(1.0 / theta.real)
            y += inv * prod
            if i < k - 1:
                prod = prod - inv * spmv(A, prod)
            i += 1
        else:
            mod2 = float(theta.real ** 2 + theta.imag ** 2)
            a = dt(2.0 * theta.real / mod2)
            b = dt(1.0 / mod2)
            ap = spmv(A, prod)
            y += a * prod - b * ap
            if i < k - 2:
                prod = prod - a * ap + b * spmv(A, ap)
            i += 2
    return y


# ---------------------------------------------------------------------------
# block Jacobi


def build_block_jacobi(A: CsrMatrix, block_size: int) -> BlockJacobiPreconditioner:
    """Factor the dense diagonal blocks of A with partially pivoted LU.

    Entries of A outside the block diagonal are ignored; entries missing
    inside a block are zero. Raises :class:`SingularBlockError` naming the
    first block whose factorization has a zero pivot.
    """
    if A.n_rows != A.n_cols:
        raise ShapeError("block Jacobi needs a square matrix")
    if block_size < 1:
        raise ValueError("block size must be positive")
    n, k = A.n_rows, min(block_size, A.n_rows)
    nb = -(-n // k)
    dt = A.values.dtype
    blocks = np.zeros((nb, k, k), dtype=dt)
    for r in range(n):
        b = r // k
        base = b * k
        sl = A.row_slice(r)
        cols = A.col_idx[sl]
        inside = (cols >= base) & (cols < min(base + k, n))
        blocks[b, r - base, cols[inside] - base] = A.values[sl][inside]
    for i in range(n - (nb - 1) * k, k):
        blocks[-1, i, i] = 1.0
    lus = np.empty_like(blocks)
    pivs = np.empty((nb, k), dtype=np.int64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        for b in range(nb):
            lu, piv = scipy.linalg.lu_factor(blocks[b], check_finite=False)
            diag = np.diag(lu)
            if np.any(diag == 0) or not np.all(np.isfinite(diag)):
                raise SingularBlockError(f"diagonal block {b} is singular")
            lus[b], pivs[b] = lu, piv
    return BlockJacobiPreconditioner(k, n, A.precision, lus, pivs)


def apply_block_jacobi(M: BlockJacobiPreconditioner, x: np.ndarray) -> np.ndarray:
    """Solve the block-diagonal system: y with diag-blocks(A) @ y = x.

    The forward and backward substitutions run vectorized across all
    blocks at once; results match per-block triangular solves.
    """
    x = np.asarray(x)
    if x.dtype != M.precision.dtype:
        raise PrecisionError("operand precision differs from the preconditioner's")
    if x.shape != (M.n,):
        raise ShapeError("operand length does not match the preconditioner")
    nb, k = M.block_lu.shape[:2]
    xb = np.zeros((nb, k), dtype=x.dtype)
    xb.reshape(-1)[: M.n] = x
    rows = np.arange(nb)
    lu, piv = M.block_lu, M.block_piv
    for i in range(k):
        j = piv[:, i]
        vi = xb[rows, i].copy()
        xb[rows, i] = xb[rows, j]
        xb[rows, j] = vi
    for i in range(1, k):
        xb[:, i] -= np.einsum("bt,bt->b", lu[:, i, :i], xb[:, :i])
    for i in range(k - 1, -1, -1):
        if i < k - 1:
            xb[:, i] -= np.einsum("bt,bt->b", lu[:, i, i + 1:], xb[:, i + 1:])
        xb[:, i] /= lu[:, i, i]
    return xb.reshape(-1)[: M.n].copy()


def cast_apply(M, A32: CsrMatrix | None, x: np.ndarray) -> np.ndarray:
    """Apply an fp32 preconditioner to an fp64 vector.

    The operand is rounded to fp32, the preconditioner applied natively in
    fp32 (using ``A32`` for polynomial evaluation), and the result embedded
    back into fp64.
    """
    if M.precision is not FP32:
        raise PrecisionError("cast_apply requires an fp32 preconditioner")
    x = np.asarray(x)
    if Precision.of(x) is not FP64:
        raise PrecisionError("cast_apply expects an fp64 operand")
    x32 = convert_vector(x, FP32)
    if isinstance(M, PolynomialPreconditioner):
        if A32 is None:
            raise ValueError("polynomial cast_apply needs the fp32 matrix")
        y32 = apply_poly(M, A32, x32)
    elif isinstance(M, BlockJacobiPreconditioner):
        y32 = apply_block_jacobi(M, x32)
    else:
        raise TypeError(f"unsupported preconditioner type {type(M).__name__}")
    return convert_vector(y32, FP64)


# ---------------------------------------------------------------------------
# reverse Cuthill-McKee


def rcm_reorder(A: CsrMatrix) -> tuple[Permutation, CsrMatrix]:
    """Reverse Cuthill-McKee ordering of the symmetrized pattern of A.

    Each connected component is traversed breadth-first from a
    pseudo-peripheral vertex (found by repeated sweeps, ties broken by
    degree then lowest index), children visited in ascending degree; the
    concatenated order is reversed. Returns the permutation and
    ``P A P^T`` in canonical form.
    """
    if A.n_rows != A.n_cols:
        raise ShapeError("reordering needs a square matrix")
    n = A.n_rows
    ptr, adj = _sym_adjacency(A)
    degree = np.diff(ptr)
    visited = np.zeros(n, dtype=bool)
    cm: list[int] = []
    for seed in range(n):
        if visited[seed]:
            continue
        root = _pseudo_peripheral(ptr, adj, degree, seed)
        cm.extend(_cuthill_mckee(ptr, adj, degree, root, visited))
    perm = Permutation(np.array(cm[::-1], dtype=np.int64))
    return perm, permute_csr(A, perm)


def permute_csr(A: CsrMatrix, perm: Permutation) -> CsrMatrix:
    """Symmetric permutation ``P A P^T`` with result[i, j] = A[perm[i], perm[j]]."""
    inv = perm.inverse_array()
    rows = np.repeat(np.arange(A.n_rows, dtype=np.int64), np.diff(A.row_ptr))
    return coo_to_csr(A.n_rows, A.n_cols, inv[rows], inv[A.col_idx.astype(np.int64)],
                      A.values.copy())


def _sym_adjacency(A: CsrMatrix) -> tuple[np.ndarray, np.ndarray]:
    """CSR adjacency of the undirected graph of A (self-loops dropped)."""
    n = A.n_rows
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(A.row_ptr))
    cols = A.col_idx.astype(np.int64)
    r2 = np.concatenate([rows, cols])
    c2 = np.concatenate([cols, rows])
    keep = r2 != c2
    enc = np.unique(r2[keep] * n + c2[keep])
    ar = enc // n
    ac = enc % n
    ptr = np.searchsorted(ar, np.arange(n + 1))
    return ptr, ac


def _bfs_levels(ptr: np.ndarray, adj: np.ndarray, root: int, n: int) -> np.ndarray:
    level = np.full(n, -1, dtype=np.int64)
    level[root] = 0
    frontier = [root]
    depth = 0
    while frontier:
        nxt = np.unique(np.concatenate([adj[ptr[v]:ptr[v + 1]] for v in frontier])) \
            if frontier else np.empty(0, dtype=np.int64)
        nxt = nxt[level[nxt] < 0]
        depth += 1
        level[nxt] = depth
        frontier = nxt.tolist()
    return level


def _pseudo_peripheral(ptr: np.ndarray, adj: np.ndarray, degree: np.ndarray,
                       seed: int) -> int:
    n = len(ptr) - 1
    x = seed
    level = _bfs_levels(ptr, adj, x, n)
    ecc = int(level.max())
    while True:
        last = np.flatnonzero(level == ecc)
        cand = int(last[np.lexsort((last, degree[last]))[0]])
        cand_level = _bfs_levels(ptr, adj, cand, n)
        cand_ecc = int(cand_level.max())
        if cand_ecc > ecc:
            x, level, ecc = cand, cand_level, cand_ecc
        else:
            return cand


def _cuthill_mckee(ptr: np.ndarray, adj: np.ndarray, degree: np.ndarray,
                   root: int, visited: np.ndarray) -> list[int]:
    order = [root]
    visited[root] = True
    head = 0
    while head < len(order):
        v = order[head]
        head += 1
        nb = adj[ptr[v]:ptr[v + 1]]
        nb = nb[~visited[nb]]
        if nb.size:
            nb = nb[np.lexsort((nb, degree[nb]))]
            visited[nb] = True
            order.extend(int(u) for u in nb)
    return order
