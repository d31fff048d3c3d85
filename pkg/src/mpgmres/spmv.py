"""CSR sparse matrix-vector product and an analytic fp64-to-fp32 speedup model.

The model counts bytes read through cache for one product ``y = A @ x`` on
an n-row CSR matrix with w nonzeros per row, assuming the source vector is
re-read from memory for every nonzero in fp64 but read exactly once in fp32
(perfect reuse), with 4-byte integers and floats and 8-byte doubles.
Row-pointer reads and writes to ``y`` are ignored as a small fraction of
the traffic. That gives read volumes of ``20*w*n`` bytes in fp64 versus
``(8*w + 4)*n`` bytes in fp32, hence a predicted speedup of ``5w/(2w+1)``,
strictly increasing in w and bounded above by 2.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import timing
from .core import CsrMatrix, PrecisionError, ShapeError

__all__ = ["SpmvModelInput", "spmv", "predicted_speedup", "cache_read_volumes"]

INT_BYTES = 4
FLOAT_BYTES = 4
DOUBLE_BYTES = 8


@dataclass(frozen=True)
class SpmvModelInput:
    """Shape parameters of the model: average nonzeros per row and row count.

    ``w`` is real-valued (nnz/n) so the model also applies to matrices with
    irregular rows, even though its derivation assumes a constant per-row
    count.
    """

    w: float
    n: int

    def __post_init__(self) -> None:
        if self.w < 1:
            raise ValueError(f"w must be >= 1, got {self.w}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")


def spmv(A: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse product ``A @ x`` accumulated in A's precision.

    Each row is a dot product accumulated left to right in storage order,
    so results are deterministic. Operands must share one precision.
    """
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != A.n_cols:
        raise ShapeError(f"vector length {x.shape} does not match {A.n_cols} columns")
    if x.dtype != A.values.dtype:
        raise PrecisionError("spmv operands must share one precision; cast explicitly")
    t0 = timing.tick()
    if A.nnz == 0:
        y = np.zeros(A.n_rows, dtype=A.values.dtype)
    else:
        prods = A.values * x[A.col_idx]
        counts = np.diff(A.row_ptr)
        if counts.min() > 0:
            y = np.add.reduceat(prods, A.row_ptr[:-1])
        else:
            y = np.zeros(A.n_rows, dtype=A.values.dtype)
            nonempty = counts > 0
            y[nonempty] = np.add.reduceat(prods, A.row_ptr[:-1][nonempty])
    timing.tock(timing.SPMV, t0)
    return y


def predicted_speedup(w: float) -> float:
    """Model speedup ``5w/(2w+1)`` of fp32 over fp64 for a row width of w."""
    if w < 1:
        raise ValueError(f"w must be >= 1, got {w}")
    return 5.0 * w / (2.0 * w + 1.0)


def cache_read_volumes(model: SpmvModelInput) -> dict[str, float]:
    """Bytes read through cache per product in each precision.

    The ratio ``double_reads / float_reads`` equals
    ``predicted_speedup(model.w)`` identically.
    """
    w, n = model.w, model.n
    return {
        "double_reads": (INT_BYTES + 2 * DOUBLE_BYTES) * w * n,
        "float_reads": (INT_BYTES + FLOAT_BYTES) * w * n + FLOAT_BYTES * n,
    }
