import numpy as np
import pytest
from scipy import stats

from lpkfda.errors import EmptyDataset, EmptyWindow, TooFewSubjects
from lpkfda.estimation import (
    TheoreticalAmseInputs,
    estimate_covariance,
    estimate_mean,
    estimate_noise_variance,
    ideal_covariance,
    ideal_mean,
    theoretical_amse,
)
from lpkfda.inference import covariance_eigen
from lpkfda.kernels import SmootherSpec, equivalent_kernel_constants
from lpkfda.numerics import spawn_stream
from lpkfda.simulation import SimConfig, generate_sample, mse_eta
from lpkfda.smoothing import CurveSet, EvaluationGrid, FunctionalDataset, reconstruct, select_bandwidth

GRID = EvaluationGrid.uniform(0, 1, 21)


def curve_set(F, grid=GRID):
    F = np.asarray(F, dtype=float)
    return CurveSet(grid, F, [], np.ones(F.shape[0]))


class TestMean:
    def test_identical_curves(self):
        c = np.sin(GRID.points)
        np.testing.assert_allclose(estimate_mean(curve_set([c, c, c])).values, c, atol=1e-15)

    def test_symmetric_pair(self):
        g = GRID.points ** 2
        np.testing.assert_array_equal(estimate_mean(curve_set([g, -g])).values, 0.0)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            estimate_mean(curve_set(np.empty((0, GRID.size))))

    def test_shift(self, rng):
        F = rng.standard_normal((6, GRID.size))
        a, b = curve_set(F), curve_set(F + 2.5)
        np.testing.assert_allclose(estimate_mean(b).values, estimate_mean(a).values + 2.5, atol=1e-14)
        np.testing.assert_allclose(estimate_covariance(b).matrix, estimate_covariance(a).matrix, atol=1e-14)

    def test_reordering(self, rng):
        F = rng.standard_normal((7, GRID.size))
        perm = rng.permutation(7)
        np.testing.assert_allclose(estimate_mean(curve_set(F[perm])).values, estimate_mean(curve_set(F)).values,
                                   atol=1e-15)
        np.testing.assert_allclose(estimate_covariance(curve_set(F[perm])).matrix,
                                   estimate_covariance(curve_set(F)).matrix, atol=1e-14)


class TestCovariance:
    def test_identical_curves(self):
        c = np.cos(GRID.points)
        cov = estimate_covariance(curve_set([c] * 4))
        np.testing.assert_allclose(cov.matrix, 0.0, atol=1e-15)
        assert cov.divisor == 3

    def test_constant_curves(self):
        c = np.array([1.0, 4.0, -2.0, 0.5])
        cov = estimate_covariance(curve_set(np.repeat(c[:, None], GRID.size, axis=1)))
        np.testing.assert_allclose(cov.matrix, np.var(c, ddof=1), rtol=1e-14)

    def test_too_few(self):
        with pytest.raises(TooFewSubjects):
            estimate_covariance(curve_set([GRID.points]))

    def test_gram_properties(self, rng):
        F = rng.standard_normal((5, GRID.size)).cumsum(axis=1)
        G = estimate_covariance(curve_set(F)).matrix
        np.testing.assert_array_equal(G, G.T)
        ev = np.linalg.eigvalsh(G)
        assert ev.min() >= -1e-8 * np.trace(G)

    def test_ideal_equals_estimate_on_true_curves(self, rng):
        F = rng.standard_normal((5, GRID.size))
        np.testing.assert_array_equal(ideal_mean(F, GRID).values, estimate_mean(curve_set(F)).values)
        np.testing.assert_array_equal(ideal_covariance(F, GRID).matrix, estimate_covariance(curve_set(F)).matrix)

    @pytest.mark.slow
    def test_spectrum_from_sample(self):
        cfg = SimConfig(n=100, M=101, sigma2s=(1.0, 2.0, 3.0, 1e-4))
        sample = generate_sample(cfg, spawn_stream(8, 0))
        cs = reconstruct(sample.dataset, sample.grid, SmootherSpec("gaussian", 1, 0.03))
        lam = covariance_eigen(estimate_covariance(cs)).eigenvalues[:3]
        # one replicate: sampling sd of each eigenvalue is about sqrt(2/n), so allow 30%
        np.testing.assert_allclose(lam, cfg.true_eigenvalues(), rtol=0.3)


class TestNoiseVariance:
    def _fit(self, times, values):
        ds = FunctionalDataset.from_arrays(times, values, (0, 1))
        cs = CurveSet(GRID, np.zeros((len(times), GRID.size)), [np.zeros(len(t)) for t in times],
                      np.ones(len(times)))
        return ds, cs

    def test_zero_residuals(self, sim_sample):
        cs = reconstruct(sim_sample.dataset, sim_sample.grid, SmootherSpec("gaussian", 1, 0.05))
        exact = CurveSet(cs.grid, cs.curves, [s.values for s in sim_sample.dataset.subjects], cs.traces)
        est = estimate_noise_variance(sim_sample.dataset, exact)
        np.testing.assert_array_equal(est.values, 0.0)

    def test_constant_squared_residuals(self, rng):
        times = [np.sort(rng.uniform(0, 1, 15)) for _ in range(3)]
        signs = [rng.choice([-1.0, 1.0], 15) for _ in range(3)]
        ds, cs = self._fit(times, [0.7 * s for s in signs])
        est = estimate_noise_variance(ds, cs, bandwidth=0.2)
        np.testing.assert_allclose(est.values, 0.49, rtol=1e-13)

    def test_empty_window_is_nan(self):
        times = [np.array([0.0, 0.05, 0.1])]
        ds, cs = self._fit(times, [np.ones(3)])
        est = estimate_noise_variance(ds, cs, bandwidth=0.2, family="epanechnikov")
        assert np.isnan(est.values[-1]) and est.values[0] == pytest.approx(1.0)

    def test_all_empty(self):
        ds, cs = self._fit([np.array([0.0])], [np.ones(1)])
        grid = EvaluationGrid.uniform(0.5, 1.0, 5)
        cs = CurveSet(grid, np.zeros((1, 5)), [np.zeros(1)], np.ones(1))
        with pytest.raises(EmptyWindow):
            estimate_noise_variance(ds, cs, bandwidth=0.1, family="uniform")

    @pytest.mark.slow
    @pytest.mark.xfail(strict=True, reason="squared residuals shrink by the smoother leverage at the GCV "
                                            "bandwidth; the plain kernel average is biased low by ~30-45%")
    def test_recovers_variance_function(self):
        cfg = SimConfig(n=40, M=101)
        root = spawn_stream(5, 0)
        est = []
        for rep in range(50):
            s = generate_sample(cfg, root.substream(rep))
            h = select_bandwidth(s.dataset).h_star
            cs = reconstruct(s.dataset, s.grid, SmootherSpec("gaussian", 1, h))
            est.append(estimate_noise_variance(s.dataset, cs).values)
        g = s.grid.points
        inner = (g >= 0.1 - 1e-9) & (g <= 0.9 + 1e-9)
        truth = cfg.sigma2(g)
        assert np.max(np.abs(np.mean(est, axis=0) - truth)[inner] / truth[inner]) <= 0.25


class TestTheoreticalAmse:
    def inputs(self, eta2=0.0, gamma22=0.0, sigma2=0.1):
        return TheoreticalAmseInputs(lambda t: eta2, lambda t: gamma22, lambda t: sigma2, lambda t: 1.0, 30.0)

    def test_noise_free(self):
        spec = SmootherSpec("gaussian", 1, 0.1)
        val = theoretical_amse(self.inputs(eta2=3.0, gamma22=2.0, sigma2=0.0), spec, 0.5)
        assert val == pytest.approx((3.0 ** 2 + 2.0) * 0.1 ** 4 / 4)

    def test_variance_only(self):
        spec = SmootherSpec("epanechnikov", 1, 0.05)
        _, v = equivalent_kernel_constants(spec)
        assert theoretical_amse(self.inputs(), spec, 0.3) == pytest.approx(v * 0.1 / (30.0 * 0.05))

    def test_rejects_bad_m_tilde(self):
        with pytest.raises(ValueError):
            TheoreticalAmseInputs(abs, abs, abs, abs, 0.0)


class TestIdealEstimators:
    def test_mean_clt(self):
        # sqrt(n)(eta_tilde(t) - eta(t)) has variance gamma(t, t) = 3 at t = 0.5
        cfg = SimConfig(n=20, m=8, M=3)
        root = spawn_stream(21, 0)
        z = []
        for rep in range(1000):
            s = generate_sample(cfg, root.substream(rep))
            z.append(np.sqrt(cfg.n) * (ideal_mean(s.true_curves, s.grid).values[1] - s.true_mean[1]))
        assert np.var(z, ddof=1) == pytest.approx(float(cfg.gamma(0.5, 0.5)), rel=0.10)

    def test_estimated_mean_is_gaussian(self):
        cfg = SimConfig(n=100, M=3)
        spec = SmootherSpec("gaussian", 1, 0.04)
        root = spawn_stream(22, 0)
        est = []
        for rep in range(300):
            s = generate_sample(cfg, root.substream(rep))
            est.append(estimate_mean(reconstruct(s.dataset, s.grid, spec)).values[1])
        z = (np.array(est) - np.mean(est)) / np.std(est, ddof=1)
        res = stats.anderson(z, dist="norm")
        crit_1pct = res.critical_values[list(res.significance_level).index(1.0)]
        assert res.statistic < crit_1pct

    @pytest.mark.slow
    def test_estimated_mean_close_to_ideal(self):
        cfg = SimConfig(n=40, M=101)
        root = spawn_stream(23, 0)
        est, ideal = [], []
        for rep in range(100):
            s = generate_sample(cfg, root.substream(rep))
            h = select_bandwidth(s.dataset).h_star
            cs = reconstruct(s.dataset, s.grid, SmootherSpec("gaussian", 1, h))
            est.append(mse_eta(estimate_mean(cs), s))
            ideal.append(mse_eta(ideal_mean(s.true_curves, s.grid), s))
        assert np.median(est) < 3 * np.median(ideal)
