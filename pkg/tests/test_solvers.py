import numpy as np
import pytest

import mpgmres.krylov
from conftest import random_sparse_csr, tridiag_csr
from mpgmres.core import (FP32, FP64, CsrMatrix, PrecisionError, convert_matrix,
                          norm2)
from mpgmres.gen import StencilKind, StencilSpec, generate
from mpgmres.solvers import (SolveReport, StopCriteria, explicit_residual,
                             gmres_cycle, gmres_fd, gmres_ir, gmres_restarted)
from mpgmres.spmv import spmv
from mpgmres.timing import CATEGORIES

# recorded from the fp64 oracle run of this configuration; reductions are
# single-threaded and fixed-order, so the count is reproducible exactly
GOLDEN_LAPLACE2D50_ITERS = 235


def laplace(nx):
    return generate(StencilSpec(StencilKind.LAPLACE2D, nx))


def oracle_residuals(Ad, b, jmax):
    """Residual minima over growing Krylov spaces: explicit basis grown with
    dense Householder QR plus dense least squares."""
    n = len(b)
    K = np.zeros((n, jmax))
    K[:, 0] = b
    out = []
    for j in range(1, jmax + 1):
        Q, _ = np.linalg.qr(K[:, :j])
        if j < jmax:
            K[:, j] = Ad @ Q[:, j - 1]
        M = Ad @ Q
        c, *_ = np.linalg.lstsq(M, b, rcond=None)
        out.append(np.linalg.norm(b - M @ c))
    return out


class TestGmresCycle:
    def test_identity_one_step(self):
        A = CsrMatrix.from_dense(np.eye(2))
        b = np.array([5.0, 6.0])
        res = gmres_cycle(lambda v: spmv(A, v), b, np.zeros(2), 5, 1e-12)
        assert res.steps == 1
        assert res.breakdown
        assert np.allclose(res.x, b, atol=1e-14)

    def test_small_spd_direct_solve(self):
        A = CsrMatrix.from_dense(np.array([[4.0, 1.0], [1.0, 3.0]]))
        b = np.array([1.0, 2.0])
        res = gmres_cycle(lambda v: spmv(A, v), b, np.zeros(2), 2, 1e-12)
        assert np.abs(res.x - [1.0 / 11.0, 7.0 / 11.0]).max() <= 1e-10

    def test_step_count_matches_dense_arnoldi_oracle(self):
        A = laplace(10)
        b = np.ones(A.n_rows)
        rtol = 1e-10
        res = gmres_cycle(lambda v: spmv(A, v), b, np.zeros(A.n_rows), 100, rtol)
        oracle = oracle_residuals(A.to_dense(), b, 100)
        threshold = rtol * np.linalg.norm(b)
        oracle_steps = next(j + 1 for j, r in enumerate(oracle) if r <= threshold)
        assert abs(res.steps - oracle_steps) <= 1

    def test_exact_start_immediate_return(self):
        A = tridiag_csr(5)
        x = np.linspace(1, 2, 5)
        b = spmv(A, x)
        res = gmres_cycle(lambda v: spmv(A, v), b, x, 5, 1e-12)
        assert res.steps == 0 and np.array_equal(res.x, x)

    def test_implicit_history_nonincreasing(self, rng):
        A = random_sparse_csr(80, seed=4)
        b = rng.standard_normal(80)
        res = gmres_cycle(lambda v: spmv(A, v), b, np.zeros(80), 40, 1e-300)
        hist = res.implicit_norms
        assert all(b2 <= a * (1 + 1e-14) for a, b2 in zip(hist, hist[1:]))

    def test_implicit_matches_explicit_residual(self, rng):
        # well-conditioned fp64 run: the rotated-system estimate agrees with
        # the recomputed residual
        A = random_sparse_csr(100, seed=11)
        b = rng.standard_normal(100)
        res = gmres_cycle(lambda v: spmv(A, v), b, np.zeros(100), 30, 1e-300)
        rnorm, _ = explicit_residual(A, b, res.x)
        scale = np.abs(A.values).sum() * max(np.abs(res.x).max(), 1.0)
        assert abs(res.implicit_norms[-1] - rnorm) <= 1000 * FP64.unit_roundoff * scale

    def test_optimality_against_bruteforce(self, rng):
        # residual after j steps equals the minimum over the Krylov space
        for seed in (0, 1):
            n = 60
            Ad = np.eye(n) * 1.2 + np.random.default_rng(seed).standard_normal(
                (n, n)) / np.sqrt(n)
            b = np.random.default_rng(seed + 100).standard_normal(n)
            A = CsrMatrix.from_dense(Ad)
            res = gmres_cycle(lambda v: spmv(A, v), b, np.zeros(n), 20, 1e-300)
            oracle = oracle_residuals(Ad, b, 20)
            for mine, ref in zip(res.implicit_norms, oracle):
                assert abs(mine - ref) <= 1e-8 * ref


class TestGmresRestarted:
    def test_identity_any_n(self, rng):
        A = CsrMatrix.from_dense(np.eye(37))
        b = rng.standard_normal(37)
        rep = gmres_restarted(A, b)
        assert rep.converged and rep.total_iters == 1
        assert np.allclose(rep.x, b, atol=1e-12)

    def test_golden_iteration_count(self):
        A = laplace(50)
        b = np.ones(A.n_rows)
        rep = gmres_restarted(A, b, criteria=StopCriteria(rtol=1e-10, m=50))
        assert rep.converged
        assert rep.total_iters == GOLDEN_LAPLACE2D50_ITERS

    def test_bitwise_deterministic(self):
        A = laplace(30)
        b = np.ones(A.n_rows)
        crit = StopCriteria(rtol=1e-10, m=50)
        r1 = gmres_restarted(A, b, criteria=crit)
        r2 = gmres_restarted(A, b, criteria=crit)
        assert r1.total_iters == r2.total_iters
        assert np.array_equal(r1.x, r2.x)
        assert r1.residual_history == r2.residual_history

    def test_fp32_plateaus_unconverged(self):
        A = laplace(100)
        b = np.ones(A.n_rows)
        rep = gmres_restarted(A, b, precision=FP32,
                              criteria=StopCriteria(rtol=1e-10, m=50,
                                                    max_iters=5000))
        assert not rep.converged
        assert 1e-8 <= rep.best_explicit() <= 1e-4
        assert rep.iters_fp32 == rep.total_iters
        assert rep.x.dtype == np.float64

    def test_unconverged_report_not_exception(self):
        A = laplace(20)
        b = np.ones(A.n_rows)
        rep = gmres_restarted(A, b, criteria=StopCriteria(rtol=1e-10, m=10,
                                                          max_iters=15))
        assert isinstance(rep, SolveReport)
        assert not rep.converged and rep.total_iters == 15

    def test_stall_diagnostic_on_fp32_floor(self):
        A = laplace(30)
        b = np.ones(A.n_rows)
        rep = gmres_restarted(A, b, precision=FP32,
                              criteria=StopCriteria(rtol=1e-12, m=25,
                                                    max_iters=2000))
        assert not rep.converged
        assert rep.stalled_at is not None

    def test_history_shape(self):
        A = CsrMatrix.from_dense(np.eye(3))
        rep = gmres_restarted(A, np.ones(3))
        # initial entry plus one per iteration
        assert len(rep.residual_history) == rep.total_iters + 1
        assert rep.residual_history[0].iteration == 0
        assert rep.residual_history[0].explicit is not None

    def test_kernel_times_partition_total(self):
        A = laplace(40)
        b = np.ones(A.n_rows)
        rep = gmres_restarted(A, b, criteria=StopCriteria(rtol=1e-8, m=30))
        assert set(rep.kernel_times) == set(CATEGORIES)
        total = rep.total_time
        assert abs(sum(rep.kernel_times.values()) - total) <= 0.05 * total


class TestGmresIR:
    def test_identity_single_correction(self):
        # normalized residual exactly representable in fp32: one correction
        A = CsrMatrix.from_dense(np.eye(8))
        b = np.zeros(8)
        b[0] = 2.5
        rep = gmres_ir(A, b)
        assert rep.converged
        assert rep.iters_fp32 == 1 and rep.iters_fp64 == 0
        assert rep.total_iters == rep.iters_fp32 + rep.iters_fp64

    def test_identity_generic_rhs_refines_once(self):
        # a generic rhs needs a second pass to clean up the fp32 rounding
        # of the first correction
        A = CsrMatrix.from_dense(np.eye(8))
        rep = gmres_ir(A, np.full(8, 2.5))
        assert rep.converged and rep.total_iters <= 2

    def test_tracks_fp64_iterations(self):
        A = laplace(50)
        b = np.ones(A.n_rows)
        crit = StopCriteria(rtol=1e-10, m=50)
        dbl = gmres_restarted(A, b, criteria=crit)
        ir = gmres_ir(A, b, criteria=crit)
        assert ir.converged
        assert ir.total_iters <= dbl.total_iters + 2 * crit.m

    def test_converged_means_fp64_residual(self):
        A = laplace(30)
        b = np.ones(A.n_rows)
        crit = StopCriteria(rtol=1e-10, m=50)
        rep = gmres_ir(A, b, criteria=crit)
        assert rep.converged
        rnorm, _ = explicit_residual(A, b, rep.x)
        assert rnorm / norm2(b) <= crit.rtol

    def test_casting_invariance_repeat_runs(self):
        A = laplace(20)
        b = np.ones(A.n_rows)
        crit = StopCriteria(rtol=1e-10, m=25)
        r1 = gmres_ir(A, b, criteria=crit)
        r2 = gmres_ir(A, b, criteria=crit)
        assert r1.iters_fp32 == r2.iters_fp32
        assert np.array_equal(r1.x, r2.x)

    def test_requires_fp64_matrix(self):
        A = convert_matrix(laplace(4), FP32)
        with pytest.raises(PrecisionError):
            gmres_ir(A, np.ones(16))

    def test_convergence_only_at_restarts(self):
        # iteration count lands on an inner-cycle boundary unless the inner
        # solve stopped early on its own estimate
        A = laplace(40)
        b = np.ones(A.n_rows)
        crit = StopCriteria(rtol=1e-10, m=30)
        rep = gmres_ir(A, b, criteria=crit)
        boundaries = [e.iteration for e in rep.residual_history
                      if e.explicit is not None]
        assert rep.total_iters in boundaries


class TestGmresFD:
    def test_switch_zero_is_pure_fp64(self):
        A = laplace(30)
        b = np.ones(A.n_rows)
        crit = StopCriteria(rtol=1e-10, m=50)
        fd = gmres_fd(A, b, criteria=crit, switch_iter=0)
        dbl = gmres_restarted(A, b, criteria=crit)
        assert fd.total_iters == dbl.total_iters
        assert fd.iters_fp32 == 0
        assert np.array_equal(fd.x, dbl.x)
        assert fd.residual_history == dbl.residual_history

    def test_switch_2m_converges_not_faster(self):
        A = laplace(50)
        b = np.ones(A.n_rows)
        crit = StopCriteria(rtol=1e-10, m=50)
        fd = gmres_fd(A, b, criteria=crit, switch_iter=100)
        dbl = gmres_restarted(A, b, criteria=crit)
        assert fd.converged
        assert fd.iters_fp32 == 100
        assert fd.total_iters >= dbl.total_iters

    def test_phase_split_recorded(self):
        A = laplace(30)
        b = np.ones(A.n_rows)
        crit = StopCriteria(rtol=1e-10, m=25)
        fd = gmres_fd(A, b, criteria=crit, switch_iter=50)
        phases = [e.phase for e in fd.residual_history]
        flips = sum(1 for a, b2 in zip(phases, phases[1:]) if a != b2)
        assert flips == 1
        first_fp64 = next(e for e in fd.residual_history if e.phase == "fp64")
        assert first_fp64.iteration == fd.iters_fp32
        assert fd.total_iters == fd.iters_fp32 + fd.iters_fp64

    def test_switch_iter_must_be_multiple(self):
        A = laplace(4)
        with pytest.raises(ValueError):
            gmres_fd(A, np.ones(16), criteria=StopCriteria(m=50), switch_iter=75)


class TestExplicitResidual:
    def test_exact_solution_zero(self):
        A = CsrMatrix.from_dense(np.eye(5))
        b = np.arange(5.0)
        norm, vec = explicit_residual(A, b, b)
        assert norm == 0.0 and np.array_equal(vec, np.zeros(5))

    def test_zero_problem(self):
        A = tridiag_csr(4)
        norm, _ = explicit_residual(A, np.zeros(4), np.zeros(4))
        assert norm == 0.0

    def test_matches_dense_oracle(self, rng):
        Ad = rng.standard_normal((10, 10))
        A = CsrMatrix.from_dense(Ad)
        b = rng.standard_normal(10)
        x = rng.standard_normal(10)
        norm, vec = explicit_residual(A, b, x)
        ref = b - Ad @ x
        assert np.abs(vec - ref).max() <= 100 * FP64.unit_roundoff * \
            max(1.0, np.abs(ref).max())
        assert norm == pytest.approx(np.linalg.norm(ref), rel=1e-13)


class TestLossOfAccuracy:
    def test_perturbed_hessenberg_sets_flag(self, monkeypatch):
        # corrupt the rotated right-hand side so the cheap estimate claims
        # convergence the explicit residual contradicts
        real = mpgmres.krylov.givens_update
        calls = {"n": 0}

        def lying_update(hls, j):
            res = real(hls, j)
            calls["n"] += 1
            if calls["n"] == 5:
                hls.rhs[j + 1] *= 1e-12
                hls.implicit_resnorm = float(abs(hls.rhs[j + 1]))
                return hls.implicit_resnorm
            return res

        monkeypatch.setattr(mpgmres.krylov, "givens_update", lying_update)
        A = laplace(20)
        b = np.ones(A.n_rows)
        rep = gmres_restarted(A, b, criteria=StopCriteria(rtol=1e-10, m=50,
                                                          max_iters=200))
        assert rep.loss_of_accuracy
        assert not rep.converged

    def test_unperturbed_fp64_never_sets_flag(self):
        for nx in (10, 20, 30):
            A = laplace(nx)
            b = np.ones(A.n_rows)
            rep = gmres_restarted(A, b, criteria=StopCriteria(rtol=1e-10, m=30))
            assert rep.converged and not rep.loss_of_accuracy


class TestPreconditionedSolves:
    def test_right_preconditioning_reports_true_residual(self):
        from mpgmres.precond import build_block_jacobi, build_poly_precond
        A = laplace(10)
        b = np.ones(A.n_rows)
        crit = StopCriteria(rtol=1e-10, m=50)
        for precond in (build_block_jacobi(A, 4), build_poly_precond(A, 5, seed=1)):
            rep = gmres_restarted(A, b, criteria=crit, precond=precond)
            assert rep.converged
            rnorm, _ = explicit_residual(A, b, rep.x)
            assert rnorm / norm2(b) <= 10 * crit.rtol

    def test_fp32_precond_in_fp64_solve(self):
        # the narrowed preconditioner is a slightly non-constant operator, so
        # tolerances must sit above the fp32 noise it injects
        from mpgmres.precond import build_block_jacobi
        A = laplace(10)
        A32 = convert_matrix(A, FP32)
        b = np.ones(A.n_rows)
        M32 = build_block_jacobi(A32, 4)
        rep = gmres_restarted(A, b, criteria=StopCriteria(rtol=1e-6, m=50),
                              precond=M32)
        assert rep.converged
        rnorm, _ = explicit_residual(A, b, rep.x)
        assert rnorm / norm2(b) <= 1e-5

    def test_fp64_precond_in_fp32_solve_rejected(self):
        from mpgmres.precond import build_block_jacobi
        A = laplace(6)
        M = build_block_jacobi(A, 2)
        with pytest.raises(PrecisionError):
            gmres_restarted(A, np.ones(36), precision=FP32, precond=M,
                            criteria=StopCriteria(rtol=1e-4, m=10))
