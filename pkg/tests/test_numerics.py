import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpkfda.errors import GridMismatch, NotPositiveDefinite, NotSymmetric, SingularSystem
from lpkfda.numerics import (
    inv_sqrt_psd,
    jacobi_eigen,
    solve_weighted_ls,
    spawn_stream,
    sym_eigen,
    trapezoid_integrate,
)


def random_spd(rng, k):
    A = rng.standard_normal((k, k))
    return A @ A.T + k * np.eye(k)


class TestWeightedLeastSquares:
    def test_exact_line(self):
        t = np.linspace(-1, 2, 7)
        Z = np.column_stack([np.ones_like(t), t])
        w = np.random.default_rng(0).uniform(0.1, 3.0, t.size)
        np.testing.assert_allclose(solve_weighted_ls(Z, w, 2 + 3 * t), [2, 3], atol=1e-12)

    def test_equal_weights_is_ols(self):
        rng = np.random.default_rng(1)
        Z = rng.standard_normal((20, 3))
        y = rng.standard_normal(20)
        ols = np.linalg.lstsq(Z, y, rcond=None)[0]
        np.testing.assert_allclose(solve_weighted_ls(Z, np.full(20, 0.7), y), ols, rtol=1e-10)

    def test_one_point_fit(self):
        w = np.zeros(5)
        w[3] = 2.0
        y = np.arange(5.0) * 1.5
        assert solve_weighted_ls(np.ones((5, 1)), w, y)[0] == pytest.approx(y[3])

    def test_too_few_weighted_rows(self):
        w = np.array([1.0, 0, 0, 0])
        Z = np.column_stack([np.ones(4), np.arange(4.0)])
        with pytest.raises(SingularSystem):
            solve_weighted_ls(Z, w, np.ones(4))

    def test_collinear_basis(self):
        t = np.arange(5.0)
        with pytest.raises(SingularSystem):
            solve_weighted_ls(np.column_stack([t, 2 * t]), np.ones(5), t)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_reproduces_column_span(self, seed):
        rng = np.random.default_rng(seed)
        Z = rng.standard_normal((12, 4))
        a = rng.standard_normal(4)
        w = rng.uniform(0.05, 5, 12)
        est = solve_weighted_ls(Z, w, Z @ a)
        assert np.max(np.abs(est - a)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


class TestSymEigen:
    def test_diag(self):
        e = sym_eigen(np.diag([1.0, 2.0]))
        np.testing.assert_allclose(e.values, [2, 1])
        np.testing.assert_allclose(np.abs(e.vectors), [[0, 1], [1, 0]], atol=1e-15)

    def test_identity(self):
        np.testing.assert_allclose(sym_eigen(np.eye(3)).values, [1, 1, 1])

    def test_rank_one(self):
        v = np.array([1.0, 2.0, 2.0]) / 3.0
        np.testing.assert_allclose(sym_eigen(np.outer(v, v)).values, [1, 0, 0], atol=1e-14)

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSymmetric):
            sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))

    @pytest.mark.parametrize("method", ["jacobi", "lapack"])
    @pytest.mark.parametrize("size", [1, 2, 5, 30, 80])
    def test_invariants(self, method, size):
        rng = np.random.default_rng(size)
        B = rng.standard_normal((size, size))
        A = B + B.T
        e = sym_eigen(A, method=method)
        scale = np.max(np.abs(A))
        assert np.max(np.abs(A - e.reconstruct())) <= 1e-9 * scale
        np.testing.assert_allclose(e.vectors.T @ e.vectors, np.eye(size), atol=1e-9)
        assert np.all(np.diff(e.values) <= 0)
        assert e.values.sum() == pytest.approx(np.trace(A), rel=1e-9, abs=1e-9 * scale)

    def test_jacobi_matches_lapack(self):
        rng = np.random.default_rng(7)
        B = rng.standard_normal((40, 40))
        A = B @ B.T
        np.testing.assert_allclose(jacobi_eigen(A).values, np.sort(np.linalg.eigvalsh(A))[::-1],
                                   rtol=1e-10, atol=1e-10)


class TestInvSqrt:
    @pytest.mark.parametrize("A, expected", [
        (np.eye(3), np.eye(3)),
        (np.array([[4.0]]), np.array([[0.5]])),
        (np.diag([4.0, 9.0]), np.diag([0.5, 1 / 3])),
    ])
    def test_examples(self, A, expected):
        np.testing.assert_allclose(inv_sqrt_psd(A), expected, atol=1e-14)

    def test_whitening_and_commutation(self):
        A = random_spd(np.random.default_rng(3), 6)
        B = inv_sqrt_psd(A)
        np.testing.assert_allclose(B @ A @ B, np.eye(6), atol=1e-8)
        np.testing.assert_allclose(B @ A, A @ B, atol=1e-8)

    def test_singular(self):
        with pytest.raises(NotPositiveDefinite):
            inv_sqrt_psd(np.diag([1.0, 0.0]))


class TestTrapezoid:
    def test_constant(self):
        g = np.array([0.0, 0.3, 1.1, 2.5])
        assert trapezoid_integrate(np.full(4, 1.7), g) == pytest.approx(1.7 * 2.5, rel=1e-15)

    def test_linear_exact(self):
        g = np.linspace(0, 1, 11)
        assert trapezoid_integrate(g, g) == pytest.approx(0.5, abs=1e-15)

    def test_quadratic(self):
        g = np.linspace(0, 1, 401)
        # trapezoid error for t^2 is h^2/6; closed form 1/3
        assert abs(trapezoid_integrate(g ** 2, g) - 1 / 3) < 1e-5

    def test_mismatch(self):
        with pytest.raises(GridMismatch):
            trapezoid_integrate(np.ones(3), np.linspace(0, 1, 4))
        with pytest.raises(GridMismatch):
            trapezoid_integrate(np.ones(1), np.zeros(1))

    @given(arrays(float, 9, elements=st.floats(-1e3, 1e3)), arrays(float, 9, elements=st.floats(-1e3, 1e3)),
           st.floats(-10, 10))
    def test_linear_in_values(self, u, v, c):
        g = np.linspace(-1, 3, 9)
        lhs = trapezoid_integrate(u + c * v, g)
        rhs = trapezoid_integrate(u, g) + c * trapezoid_integrate(v, g)
        assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + np.abs(u).sum() + abs(c) * np.abs(v).sum()))


class TestStreams:
    def test_deterministic(self):
        a = spawn_stream(11, 3).gen.random(100)
        b = spawn_stream(11, 3).gen.random(100)
        np.testing.assert_array_equal(a, b)

    def test_distinct_ids(self):
        assert not np.array_equal(spawn_stream(7, 0).gen.random(100), spawn_stream(7, 1).gen.random(100))

    def test_substreams_differ(self):
        s = spawn_stream(7, 0)
        assert not np.array_equal(s.substream(0).gen.random(10), s.substream(1).gen.random(10))

    def test_normal_mean(self):
        # 3.3 sigma / sqrt(N) with N = 1e6 is 0.0033
        x = spawn_stream(2024, 5).gen.standard_normal(1_000_000)
        assert abs(x.mean()) < 0.01
