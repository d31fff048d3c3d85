import numpy as np
import pytest

from mpgmres.core import validate_csr
from mpgmres.gen import (RhsKind, RhsSpec, StencilKind, StencilSpec, generate,
                         make_rhs, parse_rhs_spec, parse_stencil_spec,
                         stencil_counts)
from mpgmres.spmv import spmv

SYMMETRIC_KINDS = (StencilKind.LAPLACE2D, StencilKind.LAPLACE3D,
                   StencilKind.STRETCHED2D, StencilKind.BIHARMONIC2D,
                   StencilKind.STAR2D)


class TestGenerate:
    def test_laplace2d_smallest(self):
        A = generate(StencilSpec(StencilKind.LAPLACE2D, 2))
        assert A.shape == (4, 4)
        assert A.nnz == 12 == 5 * 4 - 4 * 2
        dense = A.to_dense()
        assert np.all(np.diag(dense) == 4.0)
        assert np.all(dense.sum(axis=1) == 2.0)

    def test_laplace3d_smallest(self):
        A = generate(StencilSpec(StencilKind.LAPLACE3D, 2))
        assert A.shape == (8, 8)
        dense = A.to_dense()
        assert np.all(np.diag(dense) == 6.0)
        assert np.all(dense.sum(axis=1) == 3.0)

    def test_nnz_formulas_match_materialization(self):
        for nx in (2, 3, 5, 9):
            A = generate(StencilSpec(StencilKind.LAPLACE2D, nx))
            assert A.nnz == 5 * nx ** 2 - 4 * nx
            A = generate(StencilSpec(StencilKind.LAPLACE3D, nx))
            assert A.nnz == 7 * nx ** 3 - 6 * nx ** 2

    def test_counts_without_materializing(self):
        n, nnz = stencil_counts(StencilSpec(StencilKind.RECIRC2D, 1500))
        assert n == 2_250_000
        assert nnz == 11_244_000

    def test_counts_agree_with_generate(self):
        for kind in StencilKind:
            nx = 4 if kind is not StencilKind.LAPLACE3D else 3
            spec = StencilSpec(kind, nx)
            A = generate(spec)
            assert (A.n_rows, A.nnz) == stencil_counts(spec)

    @pytest.mark.parametrize("kind", SYMMETRIC_KINDS)
    def test_symmetric_kinds_exactly_symmetric(self, kind):
        nx = 5 if kind is not StencilKind.LAPLACE3D else 3
        dense = generate(StencilSpec(kind, nx)).to_dense()
        assert np.array_equal(dense, dense.T)

    @pytest.mark.parametrize("kind", [StencilKind.CONVDIFF2D, StencilKind.RECIRC2D])
    def test_convection_kinds_nonsymmetric(self, kind):
        dense = generate(StencilSpec(kind, 6, convection=5.0)).to_dense()
        assert not np.array_equal(dense, dense.T)

    def test_zero_convection_reduces_to_laplace_bitwise(self):
        conv = generate(StencilSpec(StencilKind.CONVDIFF2D, 7, convection=0.0))
        lap = generate(StencilSpec(StencilKind.LAPLACE2D, 7))
        assert np.array_equal(conv.row_ptr, lap.row_ptr)
        assert np.array_equal(conv.col_idx, lap.col_idx)
        assert np.array_equal(conv.values, lap.values)

    def test_all_kinds_canonical(self):
        for kind in StencilKind:
            nx = 5 if kind is not StencilKind.LAPLACE3D else 3
            validate_csr(generate(StencilSpec(kind, nx)))

    def test_laplace_rowsums_nonnegative(self):
        for kind in (StencilKind.LAPLACE2D, StencilKind.LAPLACE3D,
                     StencilKind.STRETCHED2D):
            nx = 6 if kind is not StencilKind.LAPLACE3D else 4
            dense = generate(StencilSpec(kind, nx)).to_dense()
            assert dense.sum(axis=1).min() >= 0.0

    def test_stretched_scales_y_coupling(self):
        A = generate(StencilSpec(StencilKind.STRETCHED2D, 3, stretch=100.0))
        dense = A.to_dense()
        assert dense[0, 0] == 2.0 + 200.0
        assert dense[0, 1] == -1.0      # x neighbor
        assert dense[0, 3] == -100.0    # y neighbor

    def test_bandwidth_is_about_nx(self):
        nx = 8
        A = generate(StencilSpec(StencilKind.LAPLACE2D, nx))
        rows = np.repeat(np.arange(A.n_rows), np.diff(A.row_ptr))
        assert np.abs(rows - A.col_idx).max() == nx

    def test_nx_validation(self):
        with pytest.raises(ValueError):
            StencilSpec(StencilKind.LAPLACE2D, 1)


class TestMakeRhs:
    def test_ones(self):
        assert np.array_equal(make_rhs(RhsSpec(RhsKind.ONES), 5), np.ones(5))

    def test_uniform_statistics(self):
        b = make_rhs(RhsSpec(RhsKind.RANDOM_UNIFORM01, seed=7), 10_000)
        assert b.min() > 0.0 and b.max() < 1.0
        assert abs(b.mean() - 0.5) <= 0.02

    def test_normal_statistics(self):
        b = make_rhs(RhsSpec(RhsKind.RANDOM_NORMAL, seed=7), 10_000)
        assert abs(b.mean()) <= 0.05
        assert abs(b.std() - 1.0) <= 0.05

    def test_deterministic_for_seed(self):
        a = make_rhs(RhsSpec(RhsKind.RANDOM_NORMAL, seed=3), 100)
        b = make_rhs(RhsSpec(RhsKind.RANDOM_NORMAL, seed=3), 100)
        c = make_rhs(RhsSpec(RhsKind.RANDOM_NORMAL, seed=4), 100)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestParsing:
    def test_basic(self):
        spec = parse_stencil_spec("laplace2d:50")
        assert spec.kind is StencilKind.LAPLACE2D and spec.nx == 50

    def test_with_parameters(self):
        spec = parse_stencil_spec("recirc2d:30:convection=2.5")
        assert spec.kind is StencilKind.RECIRC2D
        assert spec.convection == 2.5
        spec = parse_stencil_spec("stretched2d:10:stretch=100")
        assert spec.stretch == 100.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown generator kind"):
            parse_stencil_spec("heat7d:5")

    def test_rhs_specs(self):
        assert parse_rhs_spec("ones").kind is RhsKind.ONES
        assert parse_rhs_spec("uniform", seed=5).seed == 5
        spec = parse_rhs_spec("file:/tmp/b.mtx")
        assert spec.kind is RhsKind.FROM_FILE and spec.path == "/tmp/b.mtx"
        with pytest.raises(ValueError):
            parse_rhs_spec("sawtooth")


def test_recirculating_field_direction():
    # convection field should vary over the grid (recirculation), unlike the
    # uniform-flow kind whose x couplings are constant
    uni = generate(StencilSpec(StencilKind.CONVDIFF2D, 5, convection=3.0)).to_dense()
    rec = generate(StencilSpec(StencilKind.RECIRC2D, 5, convection=3.0)).to_dense()
    uni_east = [uni[i, i + 1] for i in range(4)]
    rec_east = [rec[i, i + 1] for i in range(4)]
    assert len(set(np.round(uni_east, 12))) == 1
    assert len(set(np.round(rec_east, 12))) > 1


def test_spmv_on_generated_is_finite(rng):
    A = generate(StencilSpec(StencilKind.BIHARMONIC2D, 6))
    y = spmv(A, rng.standard_normal(A.n_cols))
    assert np.all(np.isfinite(y))
