"""Mean, covariance and noise-variance functions from reconstructed curves."""

from dataclasses import dataclass
from math import factorial
from typing import Callable

import numpy as np

from .errors import EmptyDataset, EmptyWindow, GridMismatch, TooFewSubjects
from .kernels import eval_kernel, equivalent_kernel_constants
from .smoothing import EvaluationGrid


@dataclass(frozen=True)
class MeanEstimate:
    grid: EvaluationGrid
    values: np.ndarray
    n: int


@dataclass(frozen=True)
class CovarianceEstimate:
    """Covariance on the grid; ``divisor`` is ``n-1`` or ``n-q``, ``rank_bound`` the same count."""

    grid: EvaluationGrid
    matrix: np.ndarray
    divisor: int

    @property
    def rank_bound(self):
        return self.divisor

    def variance(self):
        return np.diag(self.matrix).copy()


@dataclass(frozen=True)
class VarianceFunctionEstimate:
    """Noise variance on the grid; NaN marks empty kernel windows."""

    grid: EvaluationGrid
    values: np.ndarray
    bandwidth: float
    family: str


@dataclass(frozen=True)
class TheoreticalAmseInputs:
    """Population quantities entering the reconstruction MSE formula.

    ``eta_deriv`` is the (p+1)-th derivative of the mean, ``gamma_deriv(t)``
    the mixed derivative ``gamma_{p+1,p+1}(t, t)``, ``design_density`` the
    design density and ``m_tilde`` the harmonic mean of subject sizes.
    """

    eta_deriv: Callable
    gamma_deriv: Callable
    sigma2: Callable
    design_density: Callable
    m_tilde: float

    def __post_init__(self):
        if self.m_tilde <= 0:
            raise ValueError("m_tilde must be positive")


def _sample_mean(curves, grid):
    F = np.asarray(curves, dtype=float)
    if F.ndim != 2 or F.shape[0] == 0:
        raise EmptyDataset("no curves")
    if F.shape[1] != grid.size:
        raise GridMismatch(f"curves have {F.shape[1]} columns for a {grid.size}-point grid")
    return MeanEstimate(grid, F.mean(axis=0), F.shape[0])


def _sample_cov(curves, grid, center):
    F = np.asarray(curves, dtype=float)
    n = F.shape[0]
    if n < 2:
        raise TooFewSubjects("covariance needs at least two subjects")
    D = F - center
    G = D.T @ D / (n - 1)
    return CovarianceEstimate(grid, 0.5 * (G + G.T), n - 1)


def estimate_mean(curves):
    """Pointwise sample mean of the reconstructed curves."""
    return _sample_mean(curves.curves, curves.grid)


def estimate_covariance(curves, mean=None):
    """Sample covariance of the reconstructed curves with divisor ``n - 1``."""
    if mean is None:
        mean = estimate_mean(curves)
    return _sample_cov(curves.curves, curves.grid, mean.values)


def ideal_mean(true_curves, grid):
    """Mean of the true curves (simulation-only benchmark)."""
    return _sample_mean(true_curves, grid)


def ideal_covariance(true_curves, grid):
    F = np.asarray(true_curves, dtype=float)
    return _sample_cov(F, grid, F.mean(axis=0))


def default_noise_bandwidth(dataset):
    a, b = dataset.interval
    return (b - a) * dataset.total_size ** (-0.2)


def residuals(dataset, curves):
    """Per-subject residuals ``y_ij - fhat_i(t_ij)``."""
    return [s.values - f for s, f in zip(dataset.subjects, curves.fitted_at_design)]


def estimate_noise_variance(dataset, curves, bandwidth=None, family="gaussian"):
    """Kernel (local constant) smoother of squared residuals on the curve grid.

    With a compact ``family`` grid points whose window holds no design time
    are returned as NaN. If every grid point is empty, raises
    :class:`EmptyWindow`.
    """
    b = default_noise_bandwidth(dataset) if bandwidth is None else float(bandwidth)
    if b <= 0:
        raise ValueError("bandwidth must be positive")
    t = np.concatenate([s.times for s in dataset.subjects])
    e2 = np.concatenate(residuals(dataset, curves)) ** 2
    tau = curves.grid.points
    H = eval_kernel(family, (t[None, :] - tau[:, None]) / b)
    den = H.sum(axis=1)
    num = H @ e2
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(den > 0, num / den, np.nan)
    if np.all(np.isnan(values)):
        raise EmptyWindow(f"no design points within bandwidth {b:.4g} of any grid point")
    return VarianceFunctionEstimate(curves.grid, values, b, family)


def theoretical_amse(inputs, spec, t):
    """Leading-order average conditional MSE of the reconstructions at ``t``.

    ``B_{p+1}(K*)^2 [eta^(p+1)(t)^2 + gamma_{p+1,p+1}(t,t)] h^{2(p+1)} / ((p+1)!)^2
    + V(K*) sigma^2(t) / (pi(t) m_tilde h)``
    """
    p, h = spec.order, spec.bandwidth
    b_star, v_star = equivalent_kernel_constants(spec)
    bias2 = b_star ** 2 * (inputs.eta_deriv(t) ** 2 + inputs.gamma_deriv(t)) / factorial(p + 1) ** 2
    var = v_star * inputs.sigma2(t) / (inputs.design_density(t) * inputs.m_tilde * h)
    return float(bias2 * h ** (2 * (p + 1)) + var)
