import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdaevar.densela import kron_lyap_oracle
from sdaevar.exceptions import NotHurwitz
from sdaevar.lyap import is_hurwitz, solve_lyapunov
from helpers import random_stable


class TestHurwitz:
    def test_negative_diagonal(self):
        assert is_hurwitz(np.diag([-0.01, -1.0]))

    def test_rotation_not_stable(self):
        rep = is_hurwitz(np.array([[0.0, 1.0], [-1.0, 0.0]]))
        assert not rep
        assert rep.offending.size == 2

    def test_shifted_nilpotent(self):
        n = np.triu(np.random.default_rng(0).standard_normal((5, 5)), 1)
        rep = is_hurwitz(-np.eye(5) + n)
        assert rep
        np.testing.assert_allclose(rep.eigenvalues.real, -1.0, atol=1e-12)

    def test_eigenvalues_sorted(self):
        rep = is_hurwitz(np.diag([-3.0, -1.0, -2.0]))
        assert list(rep.eigenvalues.real) == [-3.0, -2.0, -1.0]
        assert rep.spectral_abscissa == -1.0


class TestSolveLyapunov:
    def test_scalar_default_parameters(self):
        alpha = 0.01
        b = 0.05 * np.sqrt(2 * alpha)
        sol = solve_lyapunov([[-alpha]], [[b]])
        np.testing.assert_allclose(sol.C, [[2.5e-3]], rtol=1e-14)
        np.testing.assert_allclose(np.sqrt(sol.C[0, 0]), 0.05, rtol=1e-14)

    def test_decoupled_ou_block(self):
        alpha = np.array([0.01, 0.1, 1.0, 3.0])
        b = np.array([0.1, 0.2, 0.3, 0.4])
        sol = solve_lyapunov(np.diag(-alpha), np.diag(b))
        np.testing.assert_allclose(sol.C, np.diag(b**2 / (2 * alpha)), rtol=1e-12, atol=1e-15)

    def test_random_against_oracle(self):
        rng = np.random.default_rng(12)
        a = random_stable(rng, 12)
        b = rng.standard_normal((12, 3))
        sol = solve_lyapunov(a, b)
        assert np.abs(sol.C - kron_lyap_oracle(a, b @ b.T)).max() < 1e-8

    def test_not_hurwitz(self):
        with pytest.raises(NotHurwitz) as info:
            solve_lyapunov(np.array([[0.1, 0.0], [0.0, -1.0]]), np.eye(2))
        assert np.any(np.isclose(info.value.eigenvalues, 0.1))

    def test_zero_diffusion(self):
        sol = solve_lyapunov(np.diag([-1.0, -2.0]), np.zeros((2, 1)))
        np.testing.assert_array_equal(sol.C, 0.0)

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            solve_lyapunov(-np.eye(3), np.ones((2, 1)))

    @settings(max_examples=50, deadline=None)
    @given(s=st.integers(1, 20), q=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
    def test_oracle_equivalence_property(self, s, q, seed):
        rng = np.random.default_rng(seed)
        a = random_stable(rng, s)
        b = rng.standard_normal((s, q))
        sol = solve_lyapunov(a, b)
        c = sol.C
        assert np.abs(c - kron_lyap_oracle(a, b @ b.T)).max() < 1e-8
        assert np.linalg.norm(c - c.T) <= 1e-12 * np.linalg.norm(c)
        lam = np.linalg.eigvalsh(c)
        assert lam.min() >= -1e-8 * max(lam.max(), 0.0)

    @settings(max_examples=30, deadline=None)
    @given(s=st.integers(1, 12), scale=st.floats(0.1, 10.0), seed=st.integers(0, 2**32 - 1))
    def test_scaling_property(self, s, scale, seed):
        rng = np.random.default_rng(seed)
        a = random_stable(rng, s)
        b = rng.standard_normal((s, 2))
        c1 = solve_lyapunov(a, b).C
        c2 = solve_lyapunov(a, scale * b).C
        np.testing.assert_allclose(c2, scale**2 * c1, rtol=1e-12, atol=1e-12 * np.abs(c2).max())

    def test_uncontrollable_direction_has_zero_variance(self):
        # third state is driven by nothing and feeds nothing back
        a = np.array([[-1.0, 0.5, 0.0], [0.0, -2.0, 0.0], [0.3, 0.0, -0.7]])
        a[2, 0] = 0.0
        b = np.array([[1.0], [0.5], [0.0]])
        c = solve_lyapunov(a, b).C
        assert np.linalg.matrix_rank(c) <= 3
        assert c[2, 2] == pytest.approx(0.0, abs=1e-15)
        assert c[0, 0] > 0 and c[1, 1] > 0
