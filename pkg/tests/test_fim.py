"""Tests for the structured second-moment fits, the apply path, and the oracle."""
import numpy as np
import pytest

from fimopt import fim, matlib
from fimopt.errors import (
    DimensionError,
    NumericError,
    PositivityError,
    PreconditionError,
    SizeGuardError,
)


def mixed_samples(m, n, count, seed=0):
    """Gradient stream with shared row/column mixing so fits are non-trivial."""
    rng = np.random.default_rng(seed)
    left = rng.standard_normal((m, m)) / np.sqrt(m)
    right = rng.standard_normal((n, n)) / np.sqrt(n)
    mats = left @ rng.standard_normal((count, m, n)) @ right
    mats += 0.1 * rng.standard_normal((count, m, n))
    return fim.GradientSample(mats)


def dense_inv_sqrt(mat, rcond=1e-12):
    # pseudo-inverse square root: eigenvalues below rcond * max count as zero
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    w = np.maximum(w, 0.0)
    cut = rcond * (w[-1] if w[-1] > 0 else 1.0)
    inv = np.where(w > cut, 1.0 / np.sqrt(np.where(w > cut, w, 1.0)), 0.0)
    return (v * inv) @ v.T


def loss_against(factor, samples):
    return fim.structure_loss(factor, fim.build_empirical_fim(samples))


class TestGradientSample:
    def test_from_matrices_stacks(self):
        s = fim.GradientSample.from_matrices([np.eye(2), 2 * np.eye(2)])
        assert s.count == 2
        assert s.shape == (2, 2)

    def test_single(self):
        s = fim.GradientSample.single([[1.0, 2.0]])
        assert s.mats.shape == (1, 1, 2)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            fim.GradientSample.from_matrices([np.eye(2), np.ones((3, 2))])

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            fim.GradientSample.from_matrices([])

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            fim.GradientSample(np.full((1, 2, 2), np.nan))

    def test_wrong_ndim_rejected(self):
        with pytest.raises(DimensionError):
            fim.GradientSample(np.ones((2, 2)))

    def test_moment_helpers_match_loops(self):
        s = mixed_samples(3, 4, 7, seed=11)
        sq = np.mean([g**2 for g in s.mats], axis=0)
        rows = np.mean([g @ g.T for g in s.mats], axis=0)
        cols = np.mean([g.T @ g for g in s.mats], axis=0)
        assert np.allclose(s.mean_square(), sq, atol=1e-13)
        assert np.allclose(s.mean_outer_rows(), rows, atol=1e-13)
        assert np.allclose(s.mean_outer_cols(), cols, atol=1e-13)


class TestEmpiricalFim:
    def test_single_sample_is_rank_one_outer(self):
        g = np.array([[1.0, 3.0], [2.0, 4.0]])
        est = fim.build_empirical_fim(fim.GradientSample.single(g))
        v = matlib.vec(g)
        assert np.allclose(est.matrix, np.outer(v, v), atol=1e-14)

    def test_blocks_are_column_outers(self):
        s = mixed_samples(3, 3, 9, seed=3)
        est = fim.build_empirical_fim(s)
        for i in range(3):
            for j in range(3):
                want = np.mean(
                    [np.outer(g[:, i], g[:, j]) for g in s.mats], axis=0
                )
                assert np.allclose(est.block(i, j), want, atol=1e-12)

    def test_trace_is_mean_squared_norm(self):
        s = mixed_samples(4, 3, 20, seed=4)
        est = fim.build_empirical_fim(s)
        want = np.mean([np.sum(g**2) for g in s.mats])
        assert np.isclose(np.trace(est.matrix), want, atol=1e-11)

    def test_size_guard(self):
        with pytest.raises(SizeGuardError):
            fim.build_empirical_fim(fim.GradientSample(np.ones((1, 9, 8))))

    def test_rejects_asymmetric_matrix(self):
        bad = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(PreconditionError):
            fim.EmpiricalFim(matrix=bad, shape=(1, 2))

    def test_rejects_indefinite_matrix(self):
        bad = np.diag([1.0, -1.0])
        with pytest.raises(NumericError):
            fim.EmpiricalFim(matrix=bad, shape=(1, 2))

    def test_rejects_wrong_size(self):
        with pytest.raises(DimensionError):
            fim.EmpiricalFim(matrix=np.eye(3), shape=(1, 2))


class TestFitDiagonal:
    def test_single_sample_literal(self):
        # columns stack first: vec([[1,2],[3,4]]) = (1, 3, 2, 4)
        s = fim.GradientSample.single([[1.0, 2.0], [3.0, 4.0]])
        fitted = fim.fit_diagonal(s)
        assert np.allclose(fitted.values, [1.0, 9.0, 4.0, 16.0])

    def test_two_sample_average(self):
        s = fim.GradientSample.from_matrices([[[1.0, 0.0]], [[0.0, 2.0]]])
        assert np.allclose(fim.fit_diagonal(s).values, [0.5, 2.0])

    def test_matches_estimate_diagonal(self):
        s = mixed_samples(3, 4, 15, seed=7)
        est = fim.build_empirical_fim(s)
        assert np.allclose(fim.fit_diagonal(s).values, np.diag(est.matrix), atol=1e-12)

    def test_no_worse_than_oracle(self):
        s = mixed_samples(3, 4, 30, seed=8)
        est = fim.build_empirical_fim(s)
        analytic = loss_against(fim.fit_diagonal(s), s)
        oracle = fim.oracle_minimize("diagonal", est)
        assert analytic <= oracle.loss + 1e-8


class TestFitKronecker:
    def test_identity_sample(self):
        fitted = fim.fit_kronecker_shampoo(fim.GradientSample.single(np.eye(2)))
        assert np.allclose(fitted.right, np.eye(2) / 2)
        assert np.allclose(fitted.left, np.eye(2) / 2)

    def test_left_is_mean_diagonal_block(self):
        s = mixed_samples(4, 3, 12, seed=9)
        est = fim.build_empirical_fim(s)
        fitted = fim.fit_kronecker_shampoo(s)
        block_sum = sum(est.block(i, i) for i in range(3))
        assert np.allclose(fitted.left, block_sum / 3, atol=1e-12)

    def test_trace_balance(self):
        # n tr(left) and m tr(right) both equal the mean squared Frobenius norm
        s = mixed_samples(5, 3, 12, seed=10)
        fitted = fim.fit_kronecker_shampoo(s)
        want = np.mean([np.sum(g**2) for g in s.mats])
        assert np.isclose(3 * np.trace(fitted.left), want, atol=1e-11)
        assert np.isclose(5 * np.trace(fitted.right), want, atol=1e-11)


class TestFitWhitening:
    def test_orthogonal_sample_gives_scaled_identity(self):
        rng = np.random.default_rng(12)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        fitted = fim.fit_whitening(fim.GradientSample.single(q))
        assert np.allclose(fitted.row_cov, np.eye(3) / 3, atol=1e-12)

    def test_dense_form(self):
        s = mixed_samples(3, 2, 10, seed=13)
        fitted = fim.fit_whitening(s)
        assert np.allclose(fitted.dense(), np.kron(np.eye(2), fitted.row_cov))

    def test_no_worse_than_oracle(self):
        s = mixed_samples(4, 3, 40, seed=14)
        est = fim.build_empirical_fim(s)
        analytic = loss_against(fim.fit_whitening(s), s)
        oracle = fim.oracle_minimize("whitening", est)
        assert analytic <= oracle.loss + 1e-6


class TestFitNormalization:
    def test_unit_columns(self):
        rng = np.random.default_rng(15)
        mats = rng.standard_normal((6, 4, 3))
        mats /= np.linalg.norm(mats, axis=1, keepdims=True)
        fitted = fim.fit_normalization(fim.GradientSample(mats))
        assert np.allclose(fitted.scale, 0.25, atol=1e-12)

    def test_zero_column_rejected(self):
        mats = np.ones((3, 2, 2))
        mats[:, :, 1] = 0.0
        with pytest.raises(PositivityError):
            fim.fit_normalization(fim.GradientSample(mats))

    def test_no_worse_than_oracle(self):
        s = mixed_samples(4, 3, 40, seed=16)
        est = fim.build_empirical_fim(s)
        analytic = loss_against(fim.fit_normalization(s), s)
        oracle = fim.oracle_minimize("normalization", est)
        assert analytic <= oracle.loss + 1e-6


class TestFitSharedEigen:
    def test_two_by_two_literal(self):
        # mean(G G^T) = diag(1, 4), so the basis swaps the axes
        s = fim.GradientSample.single([[1.0, 0.0], [0.0, 2.0]])
        fitted = fim.fit_shared_eigen(s)
        assert np.allclose(fitted.basis, [[0.0, 1.0], [1.0, 0.0]])
        assert np.allclose(fitted.table, [[0.0, 4.0], [1.0, 0.0]])

    def test_identity_basis_reduces_to_diagonal(self):
        s = mixed_samples(3, 4, 9, seed=17)
        fitted = fim.fit_shared_eigen(s, basis=np.eye(3))
        assert np.allclose(fitted.table, s.mean_square(), atol=1e-14)
        diag = fim.Diagonal(values=matlib.vec(fitted.table), shape=(3, 4))
        assert np.allclose(fitted.dense(), diag.dense(), atol=1e-14)

    def test_rejects_bad_basis_shape(self):
        s = mixed_samples(3, 2, 4)
        with pytest.raises(DimensionError):
            fim.fit_shared_eigen(s, basis=np.eye(2))

    def test_rejects_non_orthonormal_basis(self):
        s = mixed_samples(3, 2, 4)
        with pytest.raises(PreconditionError):
            fim.fit_shared_eigen(s, basis=np.full((3, 3), 0.5))

    def test_fixed_basis_table_is_exact_minimizer(self):
        s = mixed_samples(4, 3, 25, seed=18)
        est = fim.build_empirical_fim(s)
        rng = np.random.default_rng(19)
        basis, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        fitted = fim.fit_shared_eigen(s, basis=basis)
        analytic = loss_against(fitted, s)
        oracle = fim.oracle_minimize("shared_eigen_table", est, basis=basis)
        assert analytic <= oracle.loss + 1e-8


class TestFitSoap:
    def test_identity_right_matches_shared_eigen(self):
        s = mixed_samples(4, 3, 10, seed=20)
        left = matlib.sym_eig(s.mean_outer_rows()).vectors
        soap = fim.fit_soap(s, right_basis=np.eye(3))
        shared = fim.fit_shared_eigen(s, basis=left)
        assert np.allclose(soap.left_basis, left)
        assert np.allclose(soap.table, shared.table, atol=1e-13)

    def test_diagonal_sample_sorted_squares(self):
        s = fim.GradientSample.single(np.diag([1.0, 2.0]))
        fitted = fim.fit_soap(s)
        assert np.allclose(fitted.table, np.diag([4.0, 1.0]), atol=1e-14)

    def test_rejects_bad_basis_shape(self):
        s = mixed_samples(3, 2, 4)
        with pytest.raises(DimensionError):
            fim.fit_soap(s, left_basis=np.eye(2))
        with pytest.raises(DimensionError):
            fim.fit_soap(s, right_basis=np.eye(3))

    def test_fixed_bases_table_is_exact_minimizer(self):
        s = mixed_samples(3, 4, 25, seed=21)
        est = fim.build_empirical_fim(s)
        rng = np.random.default_rng(22)
        lb, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        rb, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        fitted = fim.fit_soap(s, left_basis=lb, right_basis=rb)
        analytic = loss_against(fitted, s)
        oracle = fim.oracle_minimize(
            "soap_table", est, left_basis=lb, right_basis=rb
        )
        assert analytic <= oracle.loss + 1e-8


class TestTwoSidedScaling:
    def test_rank_one_mean_square_is_exact(self):
        rng = np.random.default_rng(23)
        u = rng.uniform(0.5, 2.0, size=4)
        v = rng.uniform(0.5, 2.0, size=3)
        s = fim.GradientSample.single(np.sqrt(np.outer(u, v)))
        fitted = fim.fit_two_sided(s, iters=1)
        assert np.allclose(
            np.outer(fitted.row_scale, fitted.col_scale), np.outer(u, v), atol=1e-12
        )

    def test_init_independent_product(self):
        s = mixed_samples(5, 4, 30, seed=24)
        a = fim.fit_two_sided(s, iters=200)
        b = fim.fit_two_sided(s, iters=200, q_init=np.linspace(1.0, 9.0, 5))
        pa = np.outer(a.row_scale, a.col_scale)
        pb = np.outer(b.row_scale, b.col_scale)
        assert np.abs(pa - pb).max() <= 1e-8 * np.abs(pa).max()

    def test_converges_to_leading_singular_direction(self):
        rng = np.random.default_rng(25)
        p = rng.uniform(0.5, 1.5, size=(6, 5))
        s, q = fim.scaling_fixed_point(p, iters=200)
        u, _, _ = np.linalg.svd(p)
        cos = abs(q @ u[:, 0]) / np.linalg.norm(q)
        assert cos >= 1.0 - 1e-10

    def test_defaults_match_explicit_call(self):
        s = mixed_samples(4, 3, 12, seed=26)
        fitted = fim.fit_two_sided(s)
        cs, rs = fim.scaling_fixed_point(s.mean_square(), iters=5, q_init=np.ones(4))
        assert np.array_equal(fitted.col_scale, cs)
        assert np.array_equal(fitted.row_scale, rs)

    def test_zero_entry_rejected(self):
        g = np.array([[1.0, 0.0], [2.0, 3.0]])
        with pytest.raises(PositivityError):
            fim.fit_two_sided(fim.GradientSample.single(g))

    def test_iterates_stay_positive(self):
        rng = np.random.default_rng(27)
        p = rng.uniform(0.1, 2.0, size=(4, 5))
        q = np.ones(4)
        for iters in range(1, 8):
            s, q = fim.scaling_fixed_point(p, iters=iters)
            assert np.all(s > 0) and np.all(q > 0)

    def test_fixed_point_validation(self):
        p = np.ones((3, 2))
        with pytest.raises(DimensionError):
            fim.scaling_fixed_point(p, iters=0)
        with pytest.raises(DimensionError):
            fim.scaling_fixed_point(p, q_init=np.ones(2))


class TestFitGeneralScaled:
    def test_identity_block_reduces_to_normalization(self):
        s = mixed_samples(4, 3, 20, seed=28)
        scale, _ = fim.fit_general_scaled(s, iters=1)
        assert np.allclose(scale, fim.fit_normalization(s).scale, atol=1e-13)

    def test_scalar_init_invariance(self):
        s = mixed_samples(4, 3, 20, seed=29)
        s1, m1 = fim.fit_general_scaled(s, iters=4, m_init=np.eye(4))
        s2, m2 = fim.fit_general_scaled(s, iters=4, m_init=1.7 * np.eye(4))
        assert np.allclose(
            np.kron(matlib.diagv(s1), m1), np.kron(matlib.diagv(s2), m2), atol=1e-10
        )

    def test_loss_non_increasing_in_iterations(self):
        s = mixed_samples(4, 3, 30, seed=30)
        est = fim.build_empirical_fim(s)
        losses = []
        for iters in (1, 2, 4, 8, 16):
            scale, row_cov = fim.fit_general_scaled(s, iters=iters)
            dense = np.kron(matlib.diagv(scale), row_cov)
            losses.append(float(np.sum((dense - est.matrix) ** 2)))
        for earlier, later in zip(losses, losses[1:]):
            assert later <= earlier + 1e-9 * max(earlier, 1.0)

    def test_orthogonal_columns_rejected(self):
        # a single sample with orthogonal columns zeroes the cross check
        with pytest.raises(PositivityError):
            fim.fit_general_scaled(fim.GradientSample.single(np.eye(3)), iters=2)

    def test_disjoint_column_support_rejected(self):
        g1 = np.zeros((3, 2))
        g1[:, 0] = [1.0, 2.0, 3.0]
        g2 = np.zeros((3, 2))
        g2[:, 1] = [4.0, 5.0, 6.0]
        s = fim.GradientSample.from_matrices([g1, g2])
        with pytest.raises(PositivityError):
            fim.fit_general_scaled(s, iters=2)


class TestFitCompensationScale:
    def test_axis_basis_closed_form(self):
        s = mixed_samples(4, 3, 12, seed=31)
        u = np.eye(4)[:, :2]
        fitted = fim.fit_compensation_scale(s, u)
        resid = s.mean_square()[2:, :].sum(axis=0)
        assert np.allclose(fitted.scale, np.sqrt(2.0 / resid), atol=1e-12)

    def test_single_complement_direction(self):
        s = mixed_samples(3, 2, 8, seed=32)
        u = np.eye(3)[:, :2]
        fitted = fim.fit_compensation_scale(s, u)
        assert fitted.complement.shape == (3, 1)
        assert np.allclose(np.abs(fitted.complement[:, 0]), [0.0, 0.0, 1.0])

    def test_basis_validation(self):
        s = mixed_samples(3, 2, 4)
        with pytest.raises(DimensionError):
            fim.fit_compensation_scale(s, np.eye(3))
        with pytest.raises(PreconditionError):
            fim.fit_compensation_scale(s, np.full((3, 2), 0.4))

    def test_in_span_samples_stay_finite(self):
        u = np.eye(4)[:, :2]
        mats = np.einsum("ij,kjl->kil", u, np.random.default_rng(33).standard_normal((6, 2, 3)))
        fitted = fim.fit_compensation_scale(fim.GradientSample(mats), u)
        assert np.all(np.isfinite(fitted.scale))
        assert np.all(fitted.scale > 0)

    def test_no_worse_than_oracle(self):
        s = mixed_samples(4, 3, 40, seed=34)
        est = fim.build_empirical_fim(s)
        u = matlib.sym_eig(s.mean_outer_rows(), k=2).vectors
        fitted = fim.fit_compensation_scale(s, u)
        analytic = loss_against(fitted, s)
        oracle = fim.oracle_minimize(
            "compensation_scale", est, complement=fitted.complement
        )
        assert analytic <= oracle.loss + 1e-6


class TestFitGeneralBlockDiag:
    def test_blocks_match_estimate(self):
        s = mixed_samples(4, 3, 10, seed=35)
        est = fim.build_empirical_fim(s)
        fitted = fim.fit_general_blockdiag(s)
        for i in range(3):
            assert np.allclose(fitted.blocks[i], est.block(i, i), atol=1e-12)

    def test_block_diagonals_are_mean_squares(self):
        s = mixed_samples(5, 4, 9, seed=36)
        fitted = fim.fit_general_blockdiag(s)
        diags = np.stack([np.diag(b) for b in fitted.blocks], axis=1)
        assert np.allclose(diags, s.mean_square(), atol=1e-13)

    def test_row_guard(self):
        with pytest.raises(SizeGuardError):
            fim.fit_general_blockdiag(fim.GradientSample(np.ones((2, 9, 2))))

    def test_dominates_block_diagonal_families(self):
        s = mixed_samples(4, 3, 25, seed=37)
        gbd = loss_against(fim.fit_general_blockdiag(s), s)
        others = [
            loss_against(fim.fit_diagonal(s), s),
            loss_against(fim.fit_normalization(s), s),
            loss_against(fim.fit_whitening(s), s),
            loss_against(fim.fit_shared_eigen(s), s),
        ]
        for other in others:
            assert gbd <= other + 1e-9


class TestStructureLoss:
    def test_zero_for_single_active_column(self):
        rng = np.random.default_rng(38)
        mats = np.zeros((12, 4, 2))
        mats[:, :, 1] = rng.standard_normal((12, 4))
        s = fim.GradientSample(mats)
        assert loss_against(fim.fit_general_blockdiag(s), s) <= 1e-20

    def test_zero_for_axis_aligned_samples(self):
        mats = np.zeros((4, 2, 3))
        for k, (i, j, c) in enumerate([(0, 0, 1.0), (1, 2, 2.0), (0, 1, 0.5), (1, 0, 3.0)]):
            mats[k, i, j] = c
        s = fim.GradientSample(mats)
        assert loss_against(fim.fit_diagonal(s), s) <= 1e-20

    def test_shape_mismatch(self):
        s = mixed_samples(3, 2, 5)
        est = fim.build_empirical_fim(s)
        with pytest.raises(DimensionError):
            fim.structure_loss(fim.Diagonal(values=np.ones(4), shape=(2, 2)), est)


def _fitted_factor(name, samples):
    if name == "diagonal":
        return fim.fit_diagonal(samples)
    if name == "kronecker":
        return fim.fit_kronecker_shampoo(samples)
    if name == "whitening":
        return fim.fit_whitening(samples)
    if name == "normalization":
        return fim.fit_normalization(samples)
    if name == "shared_eigen":
        return fim.fit_shared_eigen(samples)
    if name == "soap":
        return fim.fit_soap(samples)
    if name == "two_sided":
        return fim.fit_two_sided(samples)
    if name == "compensation":
        u = matlib.sym_eig(samples.mean_outer_rows(), k=2).vectors
        return fim.fit_compensation_scale(samples, u)
    if name == "block_diag":
        return fim.fit_general_blockdiag(samples)
    raise AssertionError(name)


ALL_FACTORS = (
    "diagonal",
    "kronecker",
    "whitening",
    "normalization",
    "shared_eigen",
    "soap",
    "two_sided",
    "compensation",
    "block_diag",
)


class TestApplyPreconditioner:
    def test_unit_diagonal_is_identity(self):
        g = np.arange(6.0).reshape(2, 3) + 1.0
        factor = fim.Diagonal(values=np.ones(6), shape=(2, 3))
        assert np.allclose(fim.apply_preconditioner(factor, g), g)

    @pytest.mark.parametrize("name", ALL_FACTORS)
    def test_matches_dense_inverse_sqrt(self, name):
        # the efficient form must agree with devec(F~^(-1/2) vec(G))
        s = mixed_samples(4, 3, 60, seed=40)
        factor = _fitted_factor(name, s)
        rng = np.random.default_rng(41)
        g = rng.standard_normal((4, 3))
        fast = fim.apply_preconditioner(factor, g)
        dense = matlib.devec(dense_inv_sqrt(factor.dense()) @ matlib.vec(g), 4, 3)
        assert np.abs(fast - dense).max() <= 1e-8 * max(1.0, np.abs(dense).max())

    def test_rank_deficient_blocks_use_pseudo_inverse(self):
        s = fim.GradientSample.single(np.random.default_rng(42).standard_normal((4, 3)))
        factor = fim.fit_general_blockdiag(s)
        g = np.random.default_rng(43).standard_normal((4, 3))
        fast = fim.apply_preconditioner(factor, g)
        dense = matlib.devec(dense_inv_sqrt(factor.dense()) @ matlib.vec(g), 4, 3)
        assert np.allclose(fast, dense, atol=1e-8)

    def test_shared_eigen_identity_basis_matches_diagonal(self):
        s = mixed_samples(3, 4, 10, seed=44)
        shared = fim.fit_shared_eigen(s, basis=np.eye(3))
        diag = fim.fit_diagonal(s)
        g = np.random.default_rng(45).standard_normal((3, 4))
        assert np.allclose(
            fim.apply_preconditioner(shared, g),
            fim.apply_preconditioner(diag, g),
            atol=1e-12,
        )

    def test_split_basis_decomposes_into_leading_and_compensation(self):
        # a full table whose trailing rows replicate scale^-2 acts like the
        # leading-block solve plus the complement rescaling, column by column
        rng = np.random.default_rng(46)
        m, n, r = 6, 4, 2
        u_r, _ = np.linalg.qr(rng.standard_normal((m, r)))
        u_c = matlib.qr_complement(u_r)
        table_top = rng.uniform(0.5, 2.0, size=(r, n))
        scale = rng.uniform(0.5, 2.0, size=n)
        table = np.vstack([table_top, np.tile(scale**-2.0, (m - r, 1))])
        full = fim.SharedEigen(basis=np.hstack([u_r, u_c]), table=table)
        comp = fim.CompensationScale(scale=scale, complement=u_c, shape=(m, n))
        g = rng.standard_normal((m, n))
        want = u_r @ ((u_r.T @ g) / np.sqrt(table_top))
        want += fim.apply_preconditioner(comp, g)
        assert np.allclose(fim.apply_preconditioner(full, g), want, atol=1e-8)

    def test_shape_mismatch(self):
        factor = fim.Diagonal(values=np.ones(6), shape=(2, 3))
        with pytest.raises(DimensionError):
            fim.apply_preconditioner(factor, np.ones((3, 2)))


class TestGeneralityOrdering:
    def test_nested_families_on_generic_stream(self):
        s = mixed_samples(5, 4, 40, seed=47)
        shared = loss_against(fim.fit_shared_eigen(s), s)
        whit = loss_against(fim.fit_whitening(s), s)
        norm = loss_against(fim.fit_normalization(s), s)
        diag = loss_against(fim.fit_diagonal(s), s)
        assert shared <= whit + 1e-9
        assert shared <= norm + 1e-9
        assert diag <= norm + 1e-9

    def test_row_mixed_stream_prefers_shared_basis(self):
        # G = A Z puts all columns in one row eigenbasis, so the shared fit
        # beats the diagonal one once sampling noise is small
        rng = np.random.default_rng(48)
        a = rng.standard_normal((5, 5))
        mats = np.einsum("ij,kjl->kil", a, rng.standard_normal((2000, 5, 4)))
        s = fim.GradientSample(mats)
        assert loss_against(fim.fit_shared_eigen(s), s) < loss_against(
            fim.fit_diagonal(s), s
        )


class TestOracle:
    def test_diagonal_oracle_finds_clamped_diagonal(self):
        s = mixed_samples(3, 3, 20, seed=49)
        est = fim.build_empirical_fim(s)
        fit = fim.oracle_minimize("diagonal", est)
        assert fit.converged
        assert np.allclose(fit.params, np.maximum(np.diag(est.matrix), 0.0), atol=1e-6)

    def test_warm_start_cannot_be_worse(self):
        s = mixed_samples(3, 3, 20, seed=50)
        est = fim.build_empirical_fim(s)
        cold = fim.oracle_minimize("diagonal", est)
        warm = fim.oracle_minimize("diagonal", est, init=np.diag(est.matrix))
        assert warm.loss <= cold.loss + 1e-12

    def test_size_guard(self):
        big = fim.EmpiricalFim(matrix=np.eye(72), shape=(9, 8))
        with pytest.raises(SizeGuardError):
            fim.oracle_minimize("diagonal", big)

    def test_missing_context_rejected(self):
        est = fim.build_empirical_fim(mixed_samples(3, 3, 5, seed=52))
        with pytest.raises(PreconditionError):
            fim.oracle_minimize("shared_eigen_table", est)
        with pytest.raises(PreconditionError):
            fim.oracle_minimize("no_such_family", est)

    def test_compensation_params_are_scales(self):
        s = mixed_samples(4, 3, 30, seed=53)
        est = fim.build_empirical_fim(s)
        u = matlib.sym_eig(s.mean_outer_rows(), k=2).vectors
        comp = matlib.qr_complement(u)
        fit = fim.oracle_minimize("compensation_scale", est, complement=comp)
        assert np.all(fit.params > 0)


class TestCertification:
    def test_small_tier_passes(self):
        rows = fim.certify_families(seed=2024, tier="small")
        assert [r.family for r in rows] == list(fim.ORACLE_FAMILIES)
        for row in rows:
            assert row.ok, f"{row.family} gap {row.worst_gap}"
            assert row.worst_gap <= fim.CERT_GAP_TOL

    def test_perturbation_fails_exactly_one_family(self):
        rows = fim.certify_families(seed=2024, tier="small", perturb="whitening")
        for row in rows:
            assert row.ok == (row.family != "whitening")

    def test_bad_inputs(self):
        with pytest.raises(PreconditionError):
            fim.certify_families(seed=0, tier="huge")
        with pytest.raises(PreconditionError):
            fim.certify_families(seed=0, perturb="not_a_family")
