"""Linear-algebra kernels: Cholesky with jitter, triangular solves, norms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tascforge.errors import NotPositiveDefinite, ShapeMismatch, SingularMatrix
from tascforge.tensor import (
    as_tensor,
    cho_solve,
    cholesky,
    dot,
    jitter_schedule,
    l1_norm,
    l2_norm,
    matmul,
    triangular_solve,
)


class TestTensor:
    def test_reshape_and_row_major(self):
        t = as_tensor(np.arange(6), (2, 3))
        assert t.dtype == np.float64
        assert t[1, 0] == 3.0

    def test_bad_shape(self):
        with pytest.raises(ShapeMismatch):
            as_tensor(np.arange(6), (4, 2))
        with pytest.raises(ShapeMismatch):
            as_tensor(np.zeros((0, 3)))


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_reconstructs_2x2(self):
        a = np.array([[4.0, 2.0], [2.0, 3.0]])
        lower = cholesky(a)
        np.testing.assert_allclose(lower @ lower.T, a, atol=1e-12)
        assert lower[0, 1] == 0.0

    def test_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_singular_needs_jitter(self):
        a = np.ones((3, 3))
        lower, lam = cholesky(a, return_jitter=True)
        assert lam > 0
        np.testing.assert_allclose(lower @ lower.T, a + lam * np.eye(3), atol=1e-12)

    def test_schedule(self):
        lams = list(jitter_schedule())
        assert lams[0] == 0.0
        np.testing.assert_allclose(lams[1:], [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2])

    def test_rejects_asymmetric(self):
        with pytest.raises(ShapeMismatch):
            cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 10_000))
    def test_spd_roundtrip_and_solve(self, n, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(n, n))
        a = m @ m.T + n * np.eye(n)
        lower = cholesky(a)
        np.testing.assert_allclose(lower @ lower.T, a, rtol=1e-8, atol=1e-10)
        b = rng.normal(size=n)
        x = cho_solve(lower, b)
        assert np.max(np.abs(a @ x - b)) <= 1e-6 * max(np.max(np.abs(b)), 1e-300)


class TestTriangularSolve:
    def test_identity(self):
        np.testing.assert_allclose(triangular_solve(np.eye(2), [1.0, 2.0]), [1.0, 2.0])

    def test_substitution(self):
        lower = np.array([[2.0, 0.0], [1.0, 1.0]])
        x = triangular_solve(lower, [2.0, 3.0])
        np.testing.assert_allclose(x, [1.0, 2.0])
        np.testing.assert_allclose(lower @ x, [2.0, 3.0])

    def test_transposed(self):
        lower = np.array([[2.0, 0.0], [1.0, 1.0]])
        x = triangular_solve(lower, [4.0, 2.0], transposed=True)
        np.testing.assert_allclose(lower.T @ x, [4.0, 2.0])

    def test_zero_diagonal(self):
        with pytest.raises(SingularMatrix):
            triangular_solve(np.array([[0.0, 0.0], [1.0, 1.0]]), [1.0, 1.0])


class TestVectorOps:
    def test_l1(self):
        assert l1_norm([1, -2, 3]) == 6.0

    def test_dot_orthogonal(self):
        assert dot([1, 0], [0, 1]) == 0.0

    def test_matmul_identity(self):
        a = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(matmul(a, np.eye(3)), a)

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(ShapeMismatch):
            dot([1, 2], [1, 2, 3])
        with pytest.raises(ShapeMismatch):
            l1_norm([])

    def test_l2(self):
        assert l2_norm([3, 4]) == 5.0

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.floats(-1e3, 1e3))
    def test_l1_homogeneous(self, u, c):
        u = np.array(u)
        assert l1_norm(c * u) == pytest.approx(abs(c) * l1_norm(u), rel=1e-12, abs=1e-9)
