"""Simulation model with a three-term random-coefficient mean/effect structure.

    y_i(t) = eta(t) + v_i(t) + e_i(t)
    eta(t) = a0 + a1 cos(2 pi t) + a2 sin(2 pi t)
    v_i(t) = b_i0 + b_i1 cos(2 pi t) + b_i2 sin(2 pi t),  b_i ~ N(0, diag(s0, s1, s2))
    e_i(t) ~ N(0, s_eps (1 + t))

observed at t_j = j / (m + 1), each point independently missing with
probability ``r_miss``.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FdaError, GridMismatch
from .estimation import TheoreticalAmseInputs, estimate_mean, ideal_mean
from .flm import DesignMatrix, Restriction
from .inference import global_test
from .kernels import SmootherSpec
from .numerics import spawn_stream
from .smoothing import EvaluationGrid, FunctionalDataset, Subject, gcv_score, reconstruct, select_bandwidth

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
FIG1_MULTIPLIERS = (0.5, 0.8, 1.0, 1.25, 2.0)


@dataclass(frozen=True)
class SimConfig:
    n: int = 20
    m: int = 40
    r_miss: float = 0.10
    a_coeffs: Tuple[float, float, float] = (1.2, 2.3, 4.2)
    sigma2s: Tuple[float, float, float, float] = (1.0, 2.0, 3.0, 0.1)
    M: int = 400
    seed: int = 0
    min_points: int = 4

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.m < 4:
            raise ValueError("m must be at least 4")
        if not 0 <= self.r_miss < 1:
            raise ValueError("r_miss must lie in [0, 1)")
        if any(s < 0 for s in self.sigma2s):
            raise ValueError("variances must be nonnegative")
        if self.min_points > self.m:
            raise ValueError("min_points cannot exceed m")

    @property
    def design(self):
        return np.arange(1, self.m + 1) / (self.m + 1)

    def grid(self):
        return EvaluationGrid.uniform(0.0, 1.0, self.M)

    def eta(self, t):
        a0, a1, a2 = self.a_coeffs
        t = np.asarray(t, dtype=float)
        return a0 + a1 * np.cos(TWO_PI * t) + a2 * np.sin(TWO_PI * t)

    def gamma(self, s, t):
        s0, s1, s2, _ = self.sigma2s
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        return (s0 + s1 * np.cos(TWO_PI * s) * np.cos(TWO_PI * t)
                + s2 * np.sin(TWO_PI * s) * np.sin(TWO_PI * t))

    def sigma2(self, t):
        return self.sigma2s[3] * (1.0 + np.asarray(t, dtype=float))

    def eta_deriv(self, t, order):
        """``order``-th derivative of the mean function."""
        if order == 0:
            return self.eta(t)
        _, a1, a2 = self.a_coeffs
        x = TWO_PI * np.asarray(t, dtype=float) + order * np.pi / 2
        return TWO_PI ** order * (a1 * np.cos(x) + a2 * np.sin(x))

    def gamma_deriv_diag(self, t, order):
        """Mixed partial ``d^(2 order) gamma / ds^order dt^order`` on the diagonal."""
        s0, s1, s2, _ = self.sigma2s
        x = TWO_PI * np.asarray(t, dtype=float) + order * np.pi / 2
        const = s0 if order == 0 else 0.0
        return const + TWO_PI ** (2 * order) * (s1 * np.cos(x) ** 2 + s2 * np.sin(x) ** 2)

    def true_eigenvalues(self):
        """Eigenvalues of the covariance operator on [0, 1], descending."""
        s0, s1, s2, _ = self.sigma2s
        return np.sort([s0, s1 / 2, s2 / 2])[::-1]

    def amse_inputs(self, order, m_tilde):
        return TheoreticalAmseInputs(
            eta_deriv=lambda t: self.eta_deriv(t, order + 1),
            gamma_deriv=lambda t: self.gamma_deriv_diag(t, order + 1),
            sigma2=self.sigma2,
            design_density=lambda t: 1.0,
            m_tilde=m_tilde,
        )


@dataclass(frozen=True)
class SimSample:
    dataset: FunctionalDataset
    true_curves: np.ndarray
    true_mean: np.ndarray
    true_gamma: np.ndarray
    grid: EvaluationGrid
    coefficients: np.ndarray


def _basis(t):
    t = np.asarray(t, dtype=float)
    return np.stack([np.ones_like(t), np.cos(TWO_PI * t), np.sin(TWO_PI * t)], axis=-1)


def generate_sample(config, stream, mean_offsets=None):
    """Draw one sample.

    ``mean_offsets`` optionally holds one scalar or callable per subject,
    added to that subject's mean in both the observations and the true curves.
    """
    gen = stream.gen
    design = config.design
    grid = config.grid()
    sd = np.sqrt(np.asarray(config.sigma2s[:3], dtype=float))
    noise_sd = np.sqrt(config.sigma2(design))
    coef = gen.standard_normal((config.n, 3)) * sd
    times, values = [], []
    true_curves = np.empty((config.n, grid.size))
    for i in range(config.n):
        keep = gen.random(config.m) >= config.r_miss
        while keep.sum() < config.min_points:
            keep = gen.random(config.m) >= config.r_miss
        t = design[keep]
        offset = _offset(mean_offsets, i)
        f_t = config.eta(t) + _basis(t) @ coef[i] + offset(t)
        y = f_t + gen.standard_normal(t.size) * noise_sd[keep]
        times.append(t)
        values.append(y)
        true_curves[i] = config.eta(grid.points) + _basis(grid.points) @ coef[i] + offset(grid.points)
    dataset = FunctionalDataset(
        tuple(Subject(str(i), t, y) for i, (t, y) in enumerate(zip(times, values))), (0.0, 1.0))
    tau = grid.points
    return SimSample(dataset, true_curves, config.eta(tau), config.gamma(tau[:, None], tau[None, :]),
                     grid, coef)


def _offset(mean_offsets, i):
    if mean_offsets is None:
        return lambda t: 0.0
    o = mean_offsets[i]
    if callable(o):
        return o
    return lambda t, o=float(o): o


def mse_f(curves, sample):
    """Average squared reconstruction error over subjects and grid points."""
    if curves.curves.shape != sample.true_curves.shape:
        raise GridMismatch(f"{curves.curves.shape} vs {sample.true_curves.shape}")
    return float(np.mean((curves.curves - sample.true_curves) ** 2))


def mse_eta(mean, sample):
    values = mean.values if hasattr(mean, "values") else np.asarray(mean, dtype=float)
    if values.shape != sample.true_mean.shape:
        raise GridMismatch(f"{values.shape} vs {sample.true_mean.shape}")
    return float(np.mean((values - sample.true_mean) ** 2))


def gaussian_gamma_star(gamma, s1, t1, s2, t2):
    """Covariance of the sample covariance for a Gaussian effect process."""
    return gamma(s1, t2) * gamma(s2, t1) + gamma(s1, s2) * gamma(t1, t2)


@dataclass
class Fig1Study:
    rows: List[Dict]
    dropped: int = 0

    def column(self, name, multiplier=None):
        rows = self.rows if multiplier is None else [r for r in self.rows if r["multiplier"] == multiplier]
        return np.array([r[name] for r in rows], dtype=float)

    def medians(self, name):
        mults = sorted({r["multiplier"] for r in self.rows})
        return {m: float(np.median(self.column(name, m))) for m in mults}

    def ideal_median(self):
        return float(np.median(self.column("mse_eta_ideal", 1.0)))


def run_fig1_study(config, replicates, multipliers: Sequence[float] = FIG1_MULTIPLIERS,
                   family="gaussian", order=1, candidates=None):
    """Reconstruct at multiples of the GCV bandwidth and record GCV, MSE_f, MSE_eta.

    One row per replicate and multiplier; ``mse_eta_ideal`` repeats the
    mean-of-true-curves benchmark on every row of its replicate.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    root = spawn_stream(config.seed, 0)
    rows, dropped = [], 0
    for rep in range(replicates):
        sample = generate_sample(config, root.substream(rep))
        try:
            gcv = select_bandwidth(sample.dataset, candidates, family, order)
            ideal = mse_eta(ideal_mean(sample.true_curves, sample.grid), sample)
            rep_rows = []
            for mult in multipliers:
                spec = SmootherSpec(family, order, mult * gcv.h_star)
                curves = reconstruct(sample.dataset, sample.grid, spec)
                rep_rows.append({
                    "replicate": rep,
                    "multiplier": float(mult),
                    "h_star": gcv.h_star,
                    "h": spec.bandwidth,
                    "gcv": gcv_score(sample.dataset, spec),
                    "mse_f": mse_f(curves, sample),
                    "mse_eta": mse_eta(estimate_mean(curves), sample),
                    "mse_eta_ideal": ideal,
                })
        except FdaError as exc:
            log.warning("replicate %d dropped: %s", rep, exc)
            dropped += 1
            continue
        rows.extend(rep_rows)
    return Fig1Study(rows, dropped)


@dataclass(frozen=True)
class FlmScenario:
    """Two-or-more group design on top of the simulation model.

    ``shifts[g]`` is a constant added to the mean of group ``g``; all zeros
    makes the equal-means hypothesis true.
    """

    config: SimConfig = field(default_factory=SimConfig)
    group_sizes: Tuple[int, ...] = (15, 15)
    shifts: Tuple[float, ...] = (0.0, 0.0)
    grid_size: int = 101
    family: str = "gaussian"
    order: int = 1
    bandwidth: Optional[float] = None

    @property
    def n(self):
        return int(sum(self.group_sizes))

    def labels(self):
        return [f"g{g}" for g, size in enumerate(self.group_sizes) for _ in range(size)]

    def design(self):
        return DesignMatrix.groups(self.labels(), [f"g{g}" for g in range(len(self.group_sizes))])

    def draw(self, stream):
        cfg = replace(self.config, n=self.n, M=self.grid_size)
        offsets = [self.shifts[g] for g, size in enumerate(self.group_sizes) for _ in range(size)]
        return generate_sample(cfg, stream, offsets)


@dataclass
class SizePowerResult:
    rates: Dict[str, float]
    std_errors: Dict[str, float]
    replicates: int
    level: float


def size_power_study(scenario, restriction, level, replicates, stream, methods=("sim",),
                     B_sim=2000, B_boot=2000):
    """Empirical rejection rate (p <= level) of the global test per p-value method."""
    design = scenario.design()
    hits = {m: 0 for m in methods}
    for rep in range(replicates):
        sub = stream.substream(rep)
        sample = scenario.draw(sub.substream(0))
        h = scenario.bandwidth
        if h is None:
            h = select_bandwidth(sample.dataset, family=scenario.family, order=scenario.order).h_star
        curves = reconstruct(sample.dataset, sample.grid, SmootherSpec(scenario.family, scenario.order, h))
        report = global_test(curves, design, restriction, methods, B_sim=B_sim, B_boot=B_boot,
                             seed=int(sub.gen.integers(2 ** 63)))
        for m in methods:
            if report.p_values[m] <= level:
                hits[m] += 1
    rates = {m: hits[m] / replicates for m in methods}
    se = {m: float(np.sqrt(r * (1 - r) / replicates)) for m, r in rates.items()}
    return SizePowerResult(rates, se, replicates, level)


def equal_groups_restriction(groups=2):
    """``beta_1 = beta_g`` for every other group ``g``."""
    C = np.zeros((groups - 1, groups))
    C[:, 0] = 1.0
    C[np.arange(groups - 1), np.arange(1, groups)] = -1.0
    return Restriction(C)
