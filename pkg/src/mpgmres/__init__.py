"""Mixed-precision restarted GMRES.

Solvers in a single working precision (fp32 or fp64), per-restart iterative
refinement, and a one-shot fp32-to-fp64 precision switch, with polynomial
and block Jacobi right preconditioners, finite-difference matrix
generators, Matrix Market IO, and a benchmark harness.
"""

from .core import (FP32, FP64, CsrMatrix, Precision, PrecisionError,
                   PrecisionOverflowError, convert_matrix, convert_vector,
                   gemv, norm2, validate_csr)
from .gen import RhsKind, RhsSpec, StencilKind, StencilSpec, generate, make_rhs
from .io import RunConfig, SolverKind, load_matrix_market, parse_run_config
from .precond import (BlockJacobiPreconditioner, Permutation,
                      PolynomialPreconditioner, apply_block_jacobi, apply_poly,
                      build_block_jacobi, build_poly_precond, cast_apply,
                      rcm_reorder)
from .solvers import (SolveReport, StopCriteria, explicit_residual, gmres_cycle,
                      gmres_fd, gmres_ir, gmres_restarted)
from .spmv import cache_read_volumes, predicted_speedup, spmv

__version__ = "0.1.0"

__all__ = [
    "FP32", "FP64", "Precision", "CsrMatrix", "PrecisionError",
    "PrecisionOverflowError", "convert_matrix", "convert_vector", "gemv",
    "norm2", "validate_csr",
    "spmv", "predicted_speedup", "cache_read_volumes",
    "StopCriteria", "SolveReport", "gmres_cycle", "gmres_restarted",
    "gmres_ir", "gmres_fd", "explicit_residual",
    "PolynomialPreconditioner", "BlockJacobiPreconditioner", "Permutation",
    "build_poly_precond", "apply_poly", "build_block_jacobi",
    "apply_block_jacobi", "cast_apply", "rcm_reorder",
    "StencilKind", "StencilSpec", "RhsKind", "RhsSpec", "generate", "make_rhs",
    "RunConfig", "SolverKind", "load_matrix_market", "parse_run_config",
]
