"""Precision-tagged dense kernels and the CSR sparse-matrix container.

Vectors are plain 1-D numpy arrays; their dtype (float32 or float64) is the
precision tag. Multivectors are 2-D arrays whose columns are the vectors.
All kernels compute in the operands' precision and refuse mixed inputs:
precision only ever changes through the explicit ``convert_*`` operations,
so every cast in a solver is visible at its call site.

Reductions (``norm2`` and the accumulations inside ``gemv``) use a fixed
operation order, so repeated runs in the same environment produce
bit-identical results.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg.blas as _blas

try:
    from threadpoolctl import ThreadpoolController
except ImportError:  # pragma: no cover
    ThreadpoolController = None

from . import timing

__all__ = [
    "Precision",
    "FP32",
    "FP64",
    "CsrMatrix",
    "PrecisionError",
    "PrecisionOverflowError",
    "ShapeError",
    "CsrFormatError",
    "convert_vector",
    "convert_matrix",
    "gemv",
    "norm2",
    "validate_csr",
    "coo_to_csr",
    "deterministic_kernels",
]

_thread_controller = None


@contextmanager
def deterministic_kernels():
    """Pin BLAS to one thread within the scope.

    A single thread fixes the reduction order inside BLAS calls regardless
    of the machine, which makes solver trajectories bit-reproducible; it
    also avoids thread wake-up costs between the short interleaved kernels
    of an iteration, which dominate the runtime on small core counts.
    """
    global _thread_controller
    if ThreadpoolController is None:  # pragma: no cover
        yield
        return
    if _thread_controller is None:
        _thread_controller = ThreadpoolController()
    with _thread_controller.limit(limits=1, user_api="blas"):
        yield


class PrecisionError(ValueError):
    """Operands of mixed or unsupported precision reached a uniform-precision kernel."""


class PrecisionOverflowError(OverflowError):
    """A value exceeded the finite range of the target precision."""


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class CsrFormatError(ValueError):
    """A CSR matrix violates canonical form."""


class Precision(Enum):
    """Working precision of a vector or matrix."""

    FP32 = "fp32"
    FP64 = "fp64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.FP32 else np.float64)

    @property
    def unit_roundoff(self) -> float:
        """Relative rounding-error bound: 2**-24 (fp32), 2**-53 (fp64)."""
        return 2.0 ** -24 if self is Precision.FP32 else 2.0 ** -53

    @property
    def max_finite(self) -> float:
        return float(np.finfo(self.dtype).max)

    @classmethod
    def of(cls, x) -> "Precision":
        """Precision tag of an array, determined by its dtype."""
        dt = getattr(x, "dtype", None)
        if dt is not None:
            try:
                return _BY_DTYPE[np.dtype(dt)]
            except KeyError:
                pass
        raise PrecisionError(f"no precision tag for dtype {dt!r}; expected float32 or float64")


FP32 = Precision.FP32
FP64 = Precision.FP64

_BY_DTYPE = {np.dtype(np.float32): FP32, np.dtype(np.float64): FP64}


@dataclass
class CsrMatrix:
    """Sparse matrix in compressed sparse row form.

    ``row_ptr`` has length ``n_rows + 1``; row ``r`` owns the slice
    ``row_ptr[r]:row_ptr[r+1]`` of ``col_idx`` and ``values``. Canonical form
    (checked by :func:`validate_csr`) additionally requires strictly
    increasing column indices within each row. Indices are 32-bit, which
    caps ``nnz`` below 2**31.

    Matrices are treated as immutable once constructed (the arrays may be
    shared, e.g. between precision copies), which is what makes concurrent
    solves on one matrix safe.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if len(self.row_ptr) > 0 and int(np.max(self.row_ptr, initial=0)) >= 2 ** 31:
            raise CsrFormatError("nnz exceeds the 32-bit index range")
        self.row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int32)
        self.col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int32)
        self.values = np.ascontiguousarray(self.values)
        Precision.of(self.values)
        if self.n_rows < 0 or self.n_cols < 0:
            raise ShapeError("matrix dimensions must be nonnegative")
        if self.row_ptr.shape != (self.n_rows + 1,):
            raise CsrFormatError("row_ptr must have length n_rows + 1")
        if self.col_idx.shape != self.values.shape:
            raise CsrFormatError("col_idx and values must have equal length")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def precision(self) -> Precision:
        return Precision.of(self.values)

    def max_row_nnz(self) -> int:
        if self.n_rows == 0:
            return 0
        return int(np.max(np.diff(self.row_ptr)))

    def row_slice(self, r: int) -> slice:
        return slice(int(self.row_ptr[r]), int(self.row_ptr[r + 1]))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols), dtype=self.values.dtype)
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))
        out[rows, self.col_idx] = self.values
        return out

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        """CSR matrix holding exactly the nonzero entries of a dense array."""
        a = np.asarray(a)
        if a.ndim != 2:
            raise ShapeError("expected a 2-D array")
        if a.dtype not in _BY_DTYPE:
            a = a.astype(np.float64)
        rows, cols = np.nonzero(a)
        counts = np.bincount(rows, minlength=a.shape[0])
        row_ptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(a.shape[0], a.shape[1], row_ptr, cols, a[rows, cols])

    def copy(self) -> "CsrMatrix":
        return CsrMatrix(self.n_rows, self.n_cols, self.row_ptr.copy(),
                         self.col_idx.copy(), self.values.copy())


def validate_csr(A: CsrMatrix) -> CsrMatrix:
    """Check canonical CSR form; returns the matrix, raises :class:`CsrFormatError`.

    Canonical form: ``row_ptr`` starts at 0, ends at nnz, is nondecreasing;
    column indices are in range and strictly increasing within each row.
    """
    rp, ci = A.row_ptr, A.col_idx
    if rp[0] != 0:
        raise CsrFormatError("row_ptr[0] must be 0")
    if rp[-1] != A.nnz:
        raise CsrFormatError("row_ptr[-1] must equal nnz")
    if np.any(np.diff(rp) < 0):
        raise CsrFormatError("row_ptr must be nondecreasing")
    if A.nnz:
        if ci.min() < 0 or ci.max() >= A.n_cols:
            raise CsrFormatError("column index out of range")
        d = np.diff(ci)
        within = np.ones(A.nnz - 1, dtype=bool)
        starts = rp[1:-1]
        starts = starts[(starts > 0) & (starts < A.nnz)]
        within[starts - 1] = False
        if np.any(d[within] <= 0):
            bad = int(np.flatnonzero(within & (d <= 0))[0])
            raise CsrFormatError(f"column indices not strictly increasing near entry {bad}")
    return A


def coo_to_csr(n_rows: int, n_cols: int, rows, cols, values, *,
               sum_duplicates: bool = False) -> CsrMatrix:
    """Assemble canonical CSR from coordinate triplets.

    Entries are sorted by (row, col); with ``sum_duplicates`` repeated
    coordinates are added together, otherwise duplicates are a caller bug
    that :func:`validate_csr` will flag later.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values)
    order = np.lexsort((cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]
    if sum_duplicates and rows.size:
        new = np.concatenate([[True], (np.diff(rows) != 0) | (np.diff(cols) != 0)])
        starts = np.flatnonzero(new)
        values = np.add.reduceat(values, starts)
        rows, cols = rows[starts], cols[starts]
    counts = np.bincount(rows, minlength=n_rows) if rows.size else np.zeros(n_rows, dtype=np.int64)
    row_ptr = np.concatenate([[0], np.cumsum(counts)])
    return CsrMatrix(n_rows, n_cols, row_ptr, cols, values)


def convert_vector(x: np.ndarray, target: Precision) -> np.ndarray:
    """Round a vector to the target precision.

    Widening (fp32 to fp64) embeds values exactly; narrowing rounds to
    nearest and raises :class:`PrecisionOverflowError` naming the first
    entry whose magnitude exceeds the target's finite range (a signal that
    the data needs rescaling before it can live in the lower precision).
    """
    x = np.asarray(x)
    source = Precision.of(x)
    if source is target:
        return x.copy()
    with np.errstate(over="ignore"):
        out = x.astype(target.dtype)
    if target.unit_roundoff > source.unit_roundoff:
        bad = np.isinf(out) & np.isfinite(x)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise PrecisionOverflowError(
                f"entry {i} ({float(x.flat[i])!r}) overflows {target.value}")
    return out


def convert_matrix(A: CsrMatrix, target: Precision) -> CsrMatrix:
    """Convert matrix values to the target precision; the sparsity pattern is shared."""
    if A.precision is target:
        return CsrMatrix(A.n_rows, A.n_cols, A.row_ptr, A.col_idx, A.values.copy())
    with np.errstate(over="ignore"):
        vals = A.values.astype(target.dtype)
    if target.unit_roundoff > A.precision.unit_roundoff:
        bad = np.isinf(vals) & np.isfinite(A.values)
        if np.any(bad):
            i = int(np.argmax(bad))
            row = int(np.searchsorted(A.row_ptr, i, side="right")) - 1
            col = int(A.col_idx[i])
            raise PrecisionOverflowError(
                f"entry ({row}, {col}) = {float(A.values[i])!r} overflows {target.value}")
    return CsrMatrix(A.n_rows, A.n_cols, A.row_ptr, A.col_idx, vals)


_GEMV = {np.dtype(np.float32): _blas.sgemv, np.dtype(np.float64): _blas.dgemv}


def gemv(a: np.ndarray, x: np.ndarray, y: np.ndarray | None = None, *,
         alpha: float = 1.0, beta: float = 0.0, transpose: bool = False) -> np.ndarray:
    """Dense matrix-vector product ``y = alpha*op(a)@x + beta*y`` in one precision.

    ``a`` is a dense matrix or a multivector (2-D array); ``op`` is the
    identity or the transpose. When ``y`` is given it is updated in place
    where the memory layout allows and the result is returned either way;
    without ``y``, ``beta`` must be zero and a fresh vector is allocated.
    Mixed precisions are rejected: convert operands explicitly first.
    """
    a = np.asarray(a)
    x = np.asarray(x)
    if a.ndim != 2 or x.ndim != 1:
        raise ShapeError("gemv expects a 2-D matrix and a 1-D vector")
    Precision.of(a)
    if x.dtype != a.dtype or (y is not None and y.dtype != a.dtype):
        raise PrecisionError("gemv operands must share one precision; cast explicitly")
    rows, cols = a.shape
    in_len, out_len = (rows, cols) if transpose else (cols, rows)
    if x.shape[0] != in_len:
        raise ShapeError(f"operand length {x.shape[0]} does not match {in_len}")
    if y is not None and y.shape != (out_len,):
        raise ShapeError(f"output length {y.shape} does not match {out_len}")
    if y is None and beta != 0.0:
        raise ValueError("beta without an output vector")
    if rows == 0 or cols == 0:
        if y is None:
            return np.zeros(out_len, dtype=a.dtype)
        y *= a.dtype.type(beta)
        return y
    t0 = timing.tick()
    if a.flags.f_contiguous:
        fa, tr = a, transpose
    elif a.flags.c_contiguous:
        fa, tr = a.T, not transpose
    else:
        fa, tr = np.asfortranarray(a), transpose
    func = _GEMV[a.dtype]
    if y is None:
        out = func(alpha, fa, x, trans=int(tr))
    else:
        out = func(alpha, fa, x, beta=beta, y=y, trans=int(tr), overwrite_y=1)
    timing.tock(timing.GEMV_TRANS if transpose else timing.GEMV_NOTRANS, t0)
    return out


def norm2(x: np.ndarray) -> float:
    """Euclidean norm, accumulated in the vector's own precision.

    The reduction order is fixed, so results are deterministic; an empty
    vector has norm 0.
    """
    x = np.asarray(x)
    Precision.of(x)
    if x.size == 0:
        return 0.0
    t0 = timing.tick()
    s = float(np.sqrt(np.dot(x, x)))
    timing.tock(timing.NORM, t0)
    return s
