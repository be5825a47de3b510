"""Functional linear model ``f_i(t) = x_i^T beta(t) + v_i(t)`` fitted to reconstructed curves."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.stats import norm

from .errors import RankDeficientDesign, SingularRestriction, TooFewSubjects
from .estimation import CovarianceEstimate
from .numerics import RCOND_MIN
from .smoothing import EvaluationGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape[0] == 1 and np.ndim(self.X) == 1:
            X = X.T
        if not np.all(np.isfinite(X)):
            raise ValueError("design matrix has non-finite entries")
        object.__setattr__(self, "X", X)
        if not self.labels:
            object.__setattr__(self, "labels", [f"x{j + 1}" for j in range(X.shape[1])])
        if len(self.labels) != X.shape[1]:
            raise ValueError("one label per design column required")
        xtx = X.T @ X
        with np.errstate(divide="ignore"):
            rcond = 1.0 / np.linalg.cond(xtx)
        if not np.isfinite(rcond) or rcond <= RCOND_MIN:
            raise RankDeficientDesign(f"X^T X reciprocal condition {rcond:.3g}")
        if np.max(np.abs(X)) > 1e6:
            log.warning("covariates reach %.3g in magnitude; consider rescaling", np.max(np.abs(X)))

    @classmethod
    def intercept(cls, n):
        return cls(np.ones((n, 1)), ["intercept"])

    @classmethod
    def groups(cls, labels, order=None):
        """Indicator columns, one per distinct group label."""
        labels = [str(g) for g in labels]
        levels = list(order) if order is not None else sorted(set(labels), key=labels.index)
        X = np.array([[1.0 if g == lev else 0.0 for lev in levels] for g in labels])
        return cls(X, levels)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def q(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class FlmFit:
    grid: EvaluationGrid
    beta: np.ndarray
    residual_curves: np.ndarray
    gamma: CovarianceEstimate
    xtx_inv: np.ndarray
    X: np.ndarray

    @property
    def q(self):
        return self.beta.shape[0]


@dataclass(frozen=True)
class Restriction:
    """Linear hypothesis ``C beta(t) = c(t)`` for ``t`` in ``interval``.

    ``c`` is a k-vector (constant over time) or a k x M matrix on the grid;
    ``None`` means zero.
    """

    C: np.ndarray
    c: Optional[np.ndarray] = None
    interval: Optional[tuple] = None

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        object.__setattr__(self, "C", C)
        k, q = C.shape
        if np.linalg.matrix_rank(C) < k or k > q:
            raise SingularRestriction(f"C must have full row rank, got shape {C.shape}")
        if self.interval is not None:
            lo, hi = self.interval
            if not lo < hi:
                raise ValueError(f"empty sub-interval {self.interval}")

    @property
    def k(self):
        return self.C.shape[0]

    def c_on(self, grid_size):
        if self.c is None:
            return np.zeros((self.k, grid_size))
        c = np.asarray(self.c, dtype=float)
        if c.ndim == 1:
            if c.shape[0] != self.k:
                raise ValueError(f"c has {c.shape[0]} entries for {self.k} contrasts")
            return np.repeat(c[:, None], grid_size, axis=1)
        if c.shape != (self.k, grid_size):
            raise ValueError(f"c has shape {c.shape}, expected {(self.k, grid_size)}")
        return c

    def restricted_to(self, mask):
        """Same hypothesis with a time-varying ``c`` cut to ``mask``."""
        if self.c is None or np.ndim(self.c) == 1:
            return self
        return Restriction(self.C, np.asarray(self.c)[:, mask], self.interval)


def _as_design(X):
    return X if isinstance(X, DesignMatrix) else DesignMatrix(X)


def fit_flm(curves, X):
    """Pointwise least squares of the reconstructed curves on ``X``."""
    design = _as_design(X)
    F = curves.curves
    n, q = design.n, design.q
    if F.shape[0] != n:
        raise ValueError(f"{F.shape[0]} curves but {n} design rows")
    if n <= q:
        raise TooFewSubjects(f"need more subjects ({n}) than covariates ({q})")
    Xm = design.X
    xtx_inv = np.linalg.inv(Xm.T @ Xm)
    beta = xtx_inv @ Xm.T @ F
    resid = F - Xm @ beta
    G = resid.T @ resid / (n - q)
    gamma = CovarianceEstimate(curves.grid, 0.5 * (G + G.T), n - q)
    return FlmFit(curves.grid, beta, resid, gamma, xtx_inv, Xm)


def _contrast_cov(fit, C):
    M = C @ fit.xtx_inv @ C.T
    with np.errstate(divide="ignore"):
        rcond = 1.0 / np.linalg.cond(M)
    if not np.isfinite(rcond) or rcond <= RCOND_MIN:
        raise SingularRestriction("C (X^T X)^-1 C^T is numerically singular")
    return M


def restricted_fit(fit, restriction):
    """Least squares estimate of beta subject to ``C beta(t) = c(t)`` on the fit grid."""
    C = restriction.C
    if C.shape[1] != fit.q:
        raise ValueError(f"C has {C.shape[1]} columns, model has {fit.q} coefficients")
    M = _contrast_cov(fit, C)
    gap = C @ fit.beta - restriction.c_on(fit.grid.size)
    return fit.beta - fit.xtx_inv @ C.T @ np.linalg.solve(M, gap)


def coefficient_bands(fit, level=0.95):
    """Pointwise normal bands ``beta_r +- z sqrt(gamma(t,t) [(X^T X)^-1]_rr)``.

    Returns ``(lower, upper)``, each q x M.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = norm.ppf(0.5 * (1 + level))
    var_t = np.clip(np.diag(fit.gamma.matrix), 0, None)
    half = z * np.sqrt(np.outer(np.diag(fit.xtx_inv), var_t))
    return fit.beta - half, fit.beta + half
