import numpy as np
import pytest
from scipy.stats import norm

from lpkfda.errors import RankDeficientDesign, SingularRestriction, TooFewSubjects
from lpkfda.estimation import estimate_covariance, estimate_mean
from lpkfda.flm import DesignMatrix, Restriction, coefficient_bands, fit_flm, restricted_fit
from lpkfda.smoothing import CurveSet, EvaluationGrid

GRID = EvaluationGrid.uniform(0, 1, 31)


def curve_set(F):
    F = np.asarray(F, dtype=float)
    return CurveSet(GRID, F, [], np.ones(F.shape[0]))


@pytest.fixture
def data(rng):
    n = 12
    X = np.column_stack([np.ones(n), rng.standard_normal(n), rng.uniform(0, 2, n)])
    F = rng.standard_normal((n, GRID.size)).cumsum(axis=1) / 5
    return X, F


class TestDesign:
    def test_rank_deficient(self):
        X = np.column_stack([np.ones(5), np.ones(5)])
        with pytest.raises(RankDeficientDesign):
            DesignMatrix(X)

    def test_groups(self):
        d = DesignMatrix.groups(["b", "a", "b", "c"])
        assert d.labels == ["b", "a", "c"]
        np.testing.assert_array_equal(d.X, [[1, 0, 0], [0, 1, 0], [1, 0, 0], [0, 0, 1]])

    def test_extreme_values_warn(self, caplog):
        DesignMatrix(np.array([1e7, 2e7, 5e7]))
        assert "rescaling" in caplog.text

    def test_too_few_subjects(self):
        with pytest.raises(TooFewSubjects):
            fit_flm(curve_set(np.zeros((2, GRID.size))), np.eye(2))


class TestFit:
    def test_intercept_only_is_mean(self, data):
        _, F = data
        fit = fit_flm(curve_set(F), DesignMatrix.intercept(F.shape[0]))
        np.testing.assert_allclose(fit.beta[0], estimate_mean(curve_set(F)).values, atol=1e-14)
        # divisor n - q = n - 1 coincides with the sample covariance
        np.testing.assert_allclose(fit.gamma.matrix, estimate_covariance(curve_set(F)).matrix, atol=1e-13)
        assert fit.gamma.divisor == F.shape[0] - 1

    def test_groups_give_group_means(self, rng):
        labels = ["a"] * 4 + ["b"] * 3 + ["c"] * 5
        F = rng.standard_normal((12, GRID.size))
        fit = fit_flm(curve_set(F), DesignMatrix.groups(labels))
        for r, (lo, hi) in enumerate([(0, 4), (4, 7), (7, 12)]):
            np.testing.assert_allclose(fit.beta[r], F[lo:hi].mean(axis=0), atol=1e-13)

    def test_exact_model(self, data, rng):
        X, _ = data
        beta = rng.standard_normal((3, GRID.size))
        fit = fit_flm(curve_set(X @ beta), X)
        np.testing.assert_allclose(fit.beta, beta, atol=1e-12)
        np.testing.assert_allclose(fit.residual_curves, 0, atol=1e-12)
        np.testing.assert_allclose(fit.gamma.matrix, 0, atol=1e-24)

    def test_residuals_orthogonal(self, data):
        X, F = data
        fit = fit_flm(curve_set(F), X)
        assert np.max(np.abs(X.T @ fit.residual_curves)) <= 1e-8 * max(1.0, np.max(np.abs(F)))

    def test_projection_trace(self, data):
        X, _ = data
        fit = fit_flm(curve_set(np.zeros((X.shape[0], GRID.size))), X)
        P = X @ fit.xtx_inv @ X.T
        assert np.trace(P) == pytest.approx(3, abs=1e-9)

    def test_reparametrisation(self, data, rng):
        X, F = data
        A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        a, b = fit_flm(curve_set(F), X), fit_flm(curve_set(F), X @ A)
        np.testing.assert_allclose(b.beta, np.linalg.solve(A, a.beta), atol=1e-10)
        np.testing.assert_allclose(b.residual_curves, a.residual_curves, atol=1e-10)
        np.testing.assert_allclose(b.gamma.matrix, a.gamma.matrix, atol=1e-10)


class TestRestrictedFit:
    def test_no_correction_when_satisfied(self, data):
        X, F = data
        fit = fit_flm(curve_set(F), X)
        C = np.array([[1.0, -1.0, 0.0]])
        r = Restriction(C, C @ fit.beta)
        np.testing.assert_allclose(restricted_fit(fit, r), fit.beta, atol=1e-13)

    def test_orthonormal_design(self, rng):
        X = np.vstack([np.eye(2), np.zeros((3, 2))])
        F = rng.standard_normal((5, GRID.size))
        fit = fit_flm(curve_set(F), X)
        b0 = restricted_fit(fit, Restriction([[1.0, -1.0]]))
        avg = fit.beta.mean(axis=0)
        np.testing.assert_allclose(b0, np.vstack([avg, avg]), atol=1e-14)

    def test_constraint_holds(self, data, rng):
        X, F = data
        fit = fit_flm(curve_set(F), X)
        C = rng.standard_normal((2, 3))
        c = rng.standard_normal((2, GRID.size))
        b0 = restricted_fit(fit, Restriction(C, c))
        assert np.max(np.abs(C @ b0 - c)) <= 1e-8

    def test_dependent_rows(self):
        with pytest.raises(SingularRestriction):
            Restriction([[1.0, 0.0], [2.0, 0.0]])


class TestBands:
    def test_collapse_without_variance(self, data, rng):
        X, _ = data
        fit = fit_flm(curve_set(X @ rng.standard_normal((3, GRID.size))), X)
        lo, hi = coefficient_bands(fit)
        np.testing.assert_allclose(lo, fit.beta, atol=1e-10)
        np.testing.assert_allclose(hi, fit.beta, atol=1e-10)

    def test_intercept_half_width(self, data):
        _, F = data
        n = F.shape[0]
        fit = fit_flm(curve_set(F), DesignMatrix.intercept(n))
        lo, hi = coefficient_bands(fit, 0.95)
        expected = norm.ppf(0.975) * np.sqrt(np.var(F, axis=0, ddof=1) / n)
        np.testing.assert_allclose((hi - lo)[0] / 2, expected, rtol=1e-12)

    def test_homogeneous(self, data):
        X, F = data
        a, b = fit_flm(curve_set(F), X), fit_flm(curve_set(2 * F), X)
        la, ha = coefficient_bands(a)
        lb, hb = coefficient_bands(b)
        np.testing.assert_allclose(hb - lb, 2 * (ha - la), rtol=1e-12)
        np.testing.assert_allclose(b.beta, 2 * a.beta, rtol=1e-12)

    @pytest.mark.parametrize("level", [0.0, 1.0, 1.5])
    def test_level_range(self, data, level):
        X, F = data
        with pytest.raises(ValueError):
            coefficient_bands(fit_flm(curve_set(F), X), level)
