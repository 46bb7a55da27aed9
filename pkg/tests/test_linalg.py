import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from congafem.derham import HOM, build_derham
from congafem.errors import NumericalError, SingularMatrixError
from congafem.geometry import builtin_domain
from congafem.linalg import (
    cg_solve,
    dense_generalized_symmetric_eig,
    power_method_spectral_radius,
    sparse_direct_solve,
    symmetric_indefinite_solve,
)


def _spd(n, seed):
    A = np.random.default_rng(seed).standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


class TestCG:
    def test_identity_one_iteration(self):
        b = np.arange(1.0, 6.0)
        x, rep = cg_solve(np.eye(5), b)
        np.testing.assert_allclose(x, b)
        assert rep.iterations == 1 and rep.converged

    def test_diagonal(self):
        A = sp.diags(np.arange(1.0, 11.0))
        x, rep = cg_solve(A, np.ones(10))
        np.testing.assert_allclose(x, 1 / np.arange(1.0, 11.0), rtol=1e-12)
        assert rep.residual <= 1e-12

    def test_random_spd_matches_dense(self):
        A = _spd(50, 0)
        b = np.random.default_rng(1).standard_normal(50)
        x, rep = cg_solve(A, b)
        np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-9)
        # the reported residual is recomputed, not tracked
        assert rep.residual == pytest.approx(np.linalg.norm(A @ x - b) / np.linalg.norm(b), rel=1e-6)

    def test_callable_operator(self):
        A = _spd(20, 2)
        x, rep = cg_solve(lambda v: A @ v, np.ones(20))
        assert rep.converged

    def test_zero_rhs(self):
        x, rep = cg_solve(np.eye(3), np.zeros(3))
        assert np.all(x == 0) and rep.iterations == 0

    def test_non_finite(self):
        with pytest.raises(NumericalError):
            cg_solve(np.eye(2), np.array([1.0, np.nan]))

    def test_not_converged_flag(self):
        A = _spd(40, 3)
        _, rep = cg_solve(A, np.ones(40), max_iter=2)
        assert rep.status == "not_converged"


class TestDenseEig:
    def test_diagonal(self):
        w, _ = dense_generalized_symmetric_eig(np.diag([3.0, 1.0, 2.0]), np.eye(3))
        np.testing.assert_allclose(w, [1, 2, 3])

    def test_equal_pencil(self):
        B = _spd(6, 4)
        w, _ = dense_generalized_symmetric_eig(B, B)
        np.testing.assert_allclose(w, 1.0, rtol=1e-12)

    @given(seed=st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_random_pencil_residual(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((20, 20))
        A = A + A.T
        B = _spd(20, seed)
        w, V = dense_generalized_symmetric_eig(A, B)
        assert np.all(np.diff(w) >= 0)
        res = np.linalg.norm(A @ V - B @ V * w, axis=0)
        assert res.max() <= 1e-9 * np.linalg.norm(A, 2)
        np.testing.assert_allclose(V.T @ B @ V, np.eye(20), atol=1e-10)

    def test_indefinite_b_rejected(self):
        with pytest.raises(NumericalError):
            dense_generalized_symmetric_eig(np.eye(2), np.diag([1.0, -1.0]))


class TestPowerMethod:
    def test_diagonal(self):
        lam, rep = power_method_spectral_radius(np.diag([1.0, 2.0, 5.0]))
        assert lam == pytest.approx(5.0, rel=1e-9) and rep.converged

    def test_zero(self):
        lam, _ = power_method_spectral_radius(np.zeros((3, 3)))
        assert lam == 0.0

    def test_callable_needs_start(self):
        with pytest.raises(ValueError):
            power_method_spectral_radius(lambda v: v)

    def test_clustered_top_needs_block(self):
        d = np.concatenate([np.linspace(0.0, 0.8, 40), [0.9999, 1.0]])
        single, rep1 = power_method_spectral_radius(np.diag(d), tol=1e-14, max_iter=300)
        block, rep4 = power_method_spectral_radius(np.diag(d), tol=1e-14, max_iter=300, block_size=4)
        assert not rep1.converged
        assert rep4.converged and block == pytest.approx(1.0, rel=1e-12)

    def test_bad_block_size(self):
        with pytest.raises(ValueError):
            power_method_spectral_radius(np.eye(2), block_size=0)

    def test_desk_operator(self):
        ops = build_derham(builtin_domain("two_patch_square"), 3, 8)
        CP = ops.C @ ops.P(1, HOM)
        M1 = ops.mass(1)
        A = (CP.T @ ops.mass(2).matrix @ CP).tocsr()
        x0 = np.random.default_rng(0).standard_normal(ops.V1.dim)
        lam, rep = power_method_spectral_radius(lambda v: M1.solve(A @ v, check=False), tol=1e-12,
                                                max_iter=20000, inner=M1.matrix, x0=x0)
        ref = sla.eigh(A.toarray(), M1.toarray(), eigvals_only=True)[-1]
        assert abs(lam - ref) / ref < 1e-6


class TestIndefinite:
    def test_swap(self):
        x = symmetric_indefinite_solve(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1.0, 2.0]))
        np.testing.assert_allclose(x, [2.0, 1.0])

    def test_agrees_with_cg(self):
        A = _spd(30, 5)
        b = np.ones(30)
        np.testing.assert_allclose(symmetric_indefinite_solve(A, b), cg_solve(A, b)[0], atol=1e-9)

    def test_random_symmetric(self):
        rng = np.random.default_rng(6)
        A = rng.standard_normal((40, 40))
        A = A + A.T
        b = rng.standard_normal(40)
        x = symmetric_indefinite_solve(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_singular(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SingularMatrixError) as info:
            symmetric_indefinite_solve(A, np.ones(2))
        assert info.value.pivot_ratio < 1e-13


class TestSparseDirect:
    def test_solve(self):
        A = sp.csr_matrix(_spd(25, 7))
        b = np.ones(25)
        x, rep = sparse_direct_solve(A, b)
        assert rep.converged
        np.testing.assert_allclose(A @ x, b, atol=1e-10)

    def test_singular(self):
        A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0 + 1e-15]]))
        with pytest.raises(SingularMatrixError):
            sparse_direct_solve(A, np.ones(2))
