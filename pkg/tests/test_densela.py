import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdaevar import densela
from sdaevar.exceptions import IllConditioned, SingularMatrix
from helpers import random_stable


def jacobi_eigenvalues(a, tol=1e-14, sweeps=100):
    """Cyclic Jacobi rotations on a symmetric matrix (independent oracle)."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol * np.linalg.norm(a):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                j = np.eye(n)
                j[p, p] = j[q, q] = c
                j[p, q], j[q, p] = s, -s
                a = j.T @ a @ j
    return np.sort(np.diag(a))


class TestLU:
    def test_identity(self):
        b = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(densela.lu_solve(np.eye(3), b), b)

    def test_diagonal(self):
        x = densela.lu_solve(np.diag([2.0, 4.0]), np.array([[2.0], [4.0]]))
        np.testing.assert_allclose(x, [[1.0], [1.0]], rtol=0, atol=1e-15)

    def test_random_residual(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((8, 8)) + 8 * np.eye(8)
        b = rng.standard_normal((8, 3))
        x = densela.lu_solve(a, b)
        assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) < 1e-10

    def test_singular(self):
        with pytest.raises(SingularMatrix):
            densela.lu_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))

    def test_ill_conditioned_warns(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
        with pytest.warns(IllConditioned):
            densela.lu_factor(a)

    def test_rcond_matches_exact_small(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 6))
        exact = 1.0 / (np.linalg.norm(a, 1) * np.linalg.norm(np.linalg.inv(a), 1))
        est = densela.lu_factor(a).rcond()
        # the estimator bounds ||A^-1||_1 from below, so rcond from above
        assert exact <= est * (1 + 1e-12)
        assert est < 10 * exact

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            densela.lu_solve(np.array([[np.nan]]), np.ones(1))

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
    def test_relative_residual_property(self, n, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((n, n)) + n * np.eye(n)
        b = rng.standard_normal((n, 2))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IllConditioned)
            x = densela.lu_solve(a, b)
        assert np.linalg.norm(a @ x - b) <= 1e-10 * np.linalg.norm(b)


class TestSchur:
    def test_already_triangular(self):
        a = np.diag([-1.0, -2.0, -3.0])
        s = densela.real_schur(a)
        np.testing.assert_allclose(np.sort(np.diag(s.T)), [-3, -2, -1], atol=1e-14)
        np.testing.assert_allclose(np.abs(s.Q), np.abs(s.Q).round(), atol=1e-14)

    def test_rotation_block(self):
        s = densela.real_schur(np.array([[0.0, 1.0], [-1.0, 0.0]]))
        assert s.blocks() == [(0, 2)]
        np.testing.assert_allclose(sorted(s.eigenvalues, key=lambda z: z.imag), [-1j, 1j], atol=1e-14)

    def test_symmetric_against_jacobi(self):
        rng = np.random.default_rng(11)
        b = rng.standard_normal((6, 6))
        a = b + b.T
        s = densela.real_schur(a)
        assert np.abs(np.tril(s.T, -1)).max() < 1e-8
        np.testing.assert_allclose(np.sort(s.eigenvalues.real), jacobi_eigenvalues(a), atol=1e-8)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(2, 20), seed=st.integers(0, 2**32 - 1))
    def test_orthogonality_and_reconstruction(self, n, seed):
        a = np.random.default_rng(seed).standard_normal((n, n))
        s = densela.real_schur(a)
        q, t = s.Q, s.T
        assert np.linalg.norm(q.T @ q - np.eye(n)) <= 1e-10 * n
        assert np.linalg.norm(q @ t @ q.T - a) <= 1e-8 * np.linalg.norm(a)
        assert np.all(np.tril(t, -2) == 0.0)
        for i, size in s.blocks():
            if size == 2:
                blk = t[i : i + 2, i : i + 2]
                disc = (blk[0, 0] - blk[1, 1]) ** 2 + 4 * blk[0, 1] * blk[1, 0]
                assert disc < 0

    def test_eigenvalues_match_numpy(self):
        a = np.random.default_rng(5).standard_normal((15, 15))
        ours = np.sort_complex(densela.eigenvalues(a))
        ref = np.sort_complex(np.linalg.eigvals(a))
        np.testing.assert_allclose(ours, ref, atol=1e-9)

    def test_repeated_small_eigenvalues_converge(self):
        # a cluster of equal small eigenvalues coupled to a larger block
        rng = np.random.default_rng(8)
        a = np.zeros((12, 12))
        a[:6, :6] = random_stable(rng, 6, shift=1.0) * 5
        a[:6, 6:] = rng.standard_normal((6, 6))
        a[6:, 6:] = -0.01 * np.eye(6)
        p = np.eye(12)[rng.permutation(12)]
        a = p @ a @ p.T
        s = densela.real_schur(a)
        assert np.linalg.norm(s.Q @ s.T @ s.Q.T - a) <= 1e-8 * np.linalg.norm(a)
        assert np.sum(np.isclose(s.eigenvalues, -0.01, atol=1e-6)) == 6

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            densela.real_schur(np.zeros((0, 0)))


class TestKronOracle:
    def test_scalar(self):
        np.testing.assert_allclose(densela.kron_lyap_oracle([[-1.0]], [[1.0]]), [[0.5]])

    def test_decoupled_ou(self):
        alpha, b = np.array([0.01, 0.5]), np.array([7.0710678e-3, 0.3])
        c = densela.kron_lyap_oracle(np.diag(-alpha), np.diag(b**2))
        np.testing.assert_allclose(c, np.diag(b**2 / (2 * alpha)), rtol=1e-12)

    def test_random_residual(self):
        rng = np.random.default_rng(2)
        a = random_stable(rng, 5)
        b = rng.standard_normal((5, 2))
        q = b @ b.T
        c = densela.kron_lyap_oracle(a, q)
        assert np.linalg.norm(a @ c + c @ a.T + q) < 1e-10 * np.linalg.norm(q)
        assert np.abs(c - c.T).max() <= 1e-12
        assert np.linalg.eigvalsh(c).min() >= -1e-10

    def test_singular_operator(self):
        with pytest.raises(SingularMatrix):
            densela.kron_lyap_oracle(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.eye(2))
