"""Per-subject local polynomial kernel reconstruction and GCV bandwidth choice."""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import (
    DegenerateFit,
    DuplicateTimePoint,
    EmptyDataset,
    EmptyInterval,
    GridMismatch,
    InsufficientLocalData,
    NoFeasibleBandwidth,
)
from .kernels import SmootherSpec, eval_kernel
from .numerics import RCOND_MIN

# local bandwidth inflation tried when a window holds too few points
WIDEN_FACTORS = (1.0, 1.5, 1.5**2, 1.5**3, 1.5**4, 1.5**5, 8.0)
INTERPOLATION_GUARD = 1e-8
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class Subject:
    id: str
    times: np.ndarray
    values: np.ndarray

    @property
    def size(self):
        return self.times.shape[0]


@dataclass(frozen=True)
class FunctionalDataset:
    """Ragged sampled curves: one :class:`Subject` per curve on ``interval``."""

    subjects: Tuple[Subject, ...]
    interval: Tuple[float, float]

    def __post_init__(self):
        a, b = self.interval
        if not a < b:
            raise ValueError(f"interval must satisfy a < b, got {self.interval}")
        for s in self.subjects:
            if s.size < 1:
                raise EmptyDataset(f"subject {s.id} has no observations")
            if s.times.shape != s.values.shape:
                raise ValueError(f"subject {s.id}: times and values differ in length")
            if not (np.all(np.isfinite(s.times)) and np.all(np.isfinite(s.values))):
                raise ValueError(f"subject {s.id}: non-finite observation")
            d = np.diff(s.times)
            if np.any(d == 0):
                raise DuplicateTimePoint(f"subject {s.id}: duplicate design time")
            if np.any(d < 0):
                raise ValueError(f"subject {s.id}: times must be increasing")
            if s.times[0] < a or s.times[-1] > b:
                raise ValueError(f"subject {s.id}: times outside [{a}, {b}]")

    @classmethod
    def from_arrays(cls, times, values, interval, ids=None):
        """Build from per-subject sequences; times need not be sorted."""
        subjects = []
        for i, (t, y) in enumerate(zip(times, values)):
            t = np.asarray(t, dtype=float)
            y = np.asarray(y, dtype=float)
            order = np.argsort(t, kind="stable")
            sid = str(ids[i]) if ids is not None else str(i)
            subjects.append(Subject(sid, t[order], y[order]))
        return cls(tuple(subjects), (float(interval[0]), float(interval[1])))

    @property
    def n(self):
        return len(self.subjects)

    @property
    def sizes(self):
        return np.array([s.size for s in self.subjects])

    @property
    def total_size(self):
        return int(self.sizes.sum())

    @property
    def ids(self):
        return [s.id for s in self.subjects]

    def harmonic_mean_size(self):
        return 1.0 / np.mean(1.0 / self.sizes)

    def shift(self, c):
        return FunctionalDataset(
            tuple(Subject(s.id, s.times, s.values + c) for s in self.subjects), self.interval)


@dataclass(frozen=True)
class EvaluationGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise GridMismatch("grid needs at least two points")
        d = np.diff(pts)
        if np.any(d <= 0):
            raise GridMismatch("grid must be strictly increasing")
        if np.max(np.abs(d - d.mean())) > 1e-9 * max(d.mean(), 1.0):
            raise GridMismatch("grid must be uniformly spaced")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, a, b, size=400):
        return cls(np.linspace(a, b, int(size)))

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def spacing(self):
        return (self.points[-1] - self.points[0]) / (self.size - 1)

    @property
    def interval(self):
        return float(self.points[0]), float(self.points[-1])

    def mask(self, lo, hi, tol=1e-9):
        scale = tol * max(1.0, abs(hi - lo))
        return (self.points >= lo - scale) & (self.points <= hi + scale)


@dataclass(frozen=True)
class CurveSet:
    """Reconstructed curves on a common grid plus per-subject fit diagnostics."""

    grid: EvaluationGrid
    curves: np.ndarray
    fitted_at_design: List[np.ndarray]
    traces: np.ndarray
    spec: Optional[SmootherSpec] = None
    ids: List[str] = field(default_factory=list)

    @property
    def n(self):
        return self.curves.shape[0]

    def restrict(self, lo, hi):
        """Curves restricted to grid points inside ``[lo, hi]``."""
        m = self.grid.mask(lo, hi)
        if m.sum() < 2:
            raise EmptyInterval(f"fewer than two grid points in [{lo}, {hi}]")
        return CurveSet(EvaluationGrid(self.grid.points[m]), self.curves[:, m],
                        self.fitted_at_design, self.traces, self.spec, list(self.ids))

    def with_curves(self, curves):
        return CurveSet(self.grid, np.asarray(curves, dtype=float), self.fitted_at_design,
                        self.traces, self.spec, list(self.ids))


@dataclass(frozen=True)
class GcvResult:
    candidates: np.ndarray
    scores: np.ndarray
    h_star: float


def _local_solve(U, K, p):
    """Level-coefficient weights for stacked local fits; NaN rows where the fit is singular.

    ``U`` holds scaled offsets ``(t_j - t) / h`` and ``K`` kernel values, both
    shaped (rows, n). Zero kernel values act as absent points.
    """
    Z = np.empty(U.shape + (p + 1,))
    Z[..., 0] = 1.0
    for r in range(1, p + 1):
        Z[..., r] = Z[..., r - 1] * U
    enough = np.count_nonzero(K, axis=1) >= p + 1
    W = np.full(K.shape, np.nan)
    if not enough.any():
        return W
    every = enough.all()
    sk = np.sqrt(K if every else K[enough])
    # QR of sqrt(K) Z: the Gram matrix R^T R is never formed, so its condition is not squared
    Q, R = np.linalg.qr(sk[..., None] * (Z if every else Z[enough]))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rcond = 1.0 / np.linalg.cond(R) ** 2
    ok = np.isfinite(rcond) & (rcond > RCOND_MIN)
    if not ok.any():
        return W
    if not ok.all():
        Q, R, sk = Q[ok], R[ok], sk[ok]
    e1 = np.zeros(R.shape[:1] + (p + 1, 1))
    e1[:, 0, 0] = 1.0
    # w = K Z (Z^T K Z)^{-1} e1 = sqrt(K) Q R^{-T} e1
    u = np.linalg.solve(np.swapaxes(R, 1, 2), e1)[..., 0]
    vals = sk * np.einsum("mna,ma->mn", Q, u)
    rows = np.flatnonzero(enough)[ok]
    if rows.size == W.shape[0]:
        return vals
    W[rows] = vals
    return W


def _try_weights(times, points, spec, h):
    U = (times[None, :] - points[:, None]) / h
    return _local_solve(U, np.atleast_2d(eval_kernel(spec.family, U)), spec.order)


def weight_matrix(times, points, spec, subject_id=None):
    """Equivalent-kernel weight matrix, rows indexed by evaluation point.

    Row ``l`` holds the weights ``w_j(points[l])`` with
    ``fhat(points[l]) = sum_j w_j y_j``. Windows with too few points are
    widened locally by the factors in ``WIDEN_FACTORS``.
    """
    times = np.asarray(times, dtype=float)
    points = np.atleast_1d(np.asarray(points, dtype=float))
    W = np.empty((points.size, times.size))
    pending = np.arange(points.size)
    for factor in WIDEN_FACTORS:
        Wp = _try_weights(times, points[pending], spec, spec.bandwidth * factor)
        ok = ~np.isnan(Wp[:, 0]) if times.size else np.zeros(pending.size, bool)
        W[pending[ok]] = Wp[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return W
    where = f" for subject {subject_id}" if subject_id is not None else ""
    raise InsufficientLocalData(
        f"local order-{spec.order} fit singular at t={points[pending[0]]:.6g}{where} "
        f"even after widening h={spec.bandwidth:.6g} by {WIDEN_FACTORS[-1]:g}x")


def lpk_weights(times, t, spec):
    """Finite-sample equivalent-kernel weights at a single point ``t``."""
    return weight_matrix(times, [t], spec)[0]


# cap on (points x design size) cells per batched solve
_BATCH_CELLS = 400_000


def _batched(designs, spec, points=None):
    """Weight matrices for several designs in stacked solves.

    Each design is evaluated at ``points`` or, when ``points`` is None, at
    its own design times. Designs are zero-padded (padding gets zero kernel
    weight). Any design with a singular row is recomputed on its own so the
    local widening applies. Returns a list aligned with ``designs``.
    """
    out = [None] * len(designs)
    sizes = np.array([d.size for d in designs])
    order = np.argsort(sizes, kind="stable")
    start = 0
    while start < len(order):
        n_max = sizes[order[start]]
        stop = start
        while stop < len(order):
            n_max = max(n_max, sizes[order[stop]])
            rows = points.size if points is not None else n_max
            if stop > start and (stop - start + 1) * rows * n_max > _BATCH_CELLS:
                break
            stop += 1
        idx = order[start:stop]
        n_max = int(sizes[idx].max())
        T = np.zeros((idx.size, n_max))
        valid = np.zeros((idx.size, n_max), bool)
        for r, i in enumerate(idx):
            T[r, : sizes[i]] = designs[i]
            valid[r, : sizes[i]] = True
        P = np.broadcast_to(points, (idx.size, points.size)) if points is not None else T
        U = (T[:, None, :] - P[:, :, None]) / spec.bandwidth
        K = eval_kernel(spec.family, U) * valid[:, None, :]
        W = _local_solve(U.reshape(-1, n_max), K.reshape(-1, n_max), spec.order).reshape(U.shape)
        for r, i in enumerate(idx):
            rows = points.size if points is not None else sizes[i]
            Wi = W[r, :rows, : sizes[i]]
            out[i] = Wi if not np.isnan(Wi).any() else None
        start = stop
    return out


def _design_weights(dataset, spec, points=None):
    """Per-subject weight matrices; identical designs are solved once."""
    keys = [s.times.tobytes() for s in dataset.subjects]
    first = {}
    for i, k in enumerate(keys):
        first.setdefault(k, i)
    uniq = list(first.values())
    solved = _batched([dataset.subjects[i].times for i in uniq], spec, points)
    table = {}
    for i, W in zip(uniq, solved):
        s = dataset.subjects[i]
        if W is None:
            W = weight_matrix(s.times, s.times if points is None else points, spec, s.id)
        table[keys[i]] = W
    return [table[k] for k in keys]


def reconstruct(dataset, grid, spec):
    """Reconstruct every subject's curve on ``grid`` with a common bandwidth."""
    if dataset.n == 0:
        raise EmptyDataset("dataset has no subjects")
    on_grid = _design_weights(dataset, spec, grid.points)
    at_design = _design_weights(dataset, spec)
    curves = np.empty((dataset.n, grid.size))
    fitted, traces = [], np.empty(dataset.n)
    for i, (s, Wg, A) in enumerate(zip(dataset.subjects, on_grid, at_design)):
        curves[i] = Wg @ s.values
        fitted.append(A @ s.values)
        traces[i] = np.trace(A)
    return CurveSet(grid, curves, fitted, traces, spec, dataset.ids)


def gcv_score(dataset, spec, strict=False):
    """GCV score ``n^-1 sum_i ||y_i - A_i y_i||^2 / (1 - tr(A_i)/n_i)^2``.

    Returns ``inf`` when a subject is (nearly) interpolated or its local
    fits are infeasible; with ``strict=True`` those cases raise instead.
    """
    try:
        mats = _design_weights(dataset, spec)
    except InsufficientLocalData:
        if strict:
            raise
        return np.inf
    total = 0.0
    for s, A in zip(dataset.subjects, mats):
        ratio = np.trace(A) / s.size
        if ratio >= 1.0 - INTERPOLATION_GUARD:
            if strict:
                raise DegenerateFit(f"subject {s.id}: tr(A)/n_i = {ratio:.6g}")
            return np.inf
        resid = s.values - A @ s.values
        total += resid @ resid / (1.0 - ratio) ** 2
    return total / dataset.n


def default_bandwidth_candidates(dataset, count=30):
    """Log-spaced candidates from half the median within-subject gap to a quarter of the range."""
    a, b = dataset.interval
    gaps = np.concatenate([np.diff(s.times) for s in dataset.subjects if s.size > 1] or [np.array([b - a])])
    lo = 0.5 * float(np.median(gaps))
    hi = 0.25 * (b - a)
    if lo >= hi:
        lo = hi / 10.0
    return np.geomspace(lo, hi, count)


def select_bandwidth(dataset, candidates=None, family="gaussian", order=1):
    """Minimise GCV over ``candidates``; ties go to the smaller bandwidth."""
    if candidates is None:
        candidates = default_bandwidth_candidates(dataset)
    cand = np.sort(np.atleast_1d(np.asarray(candidates, dtype=float)))
    if cand.size == 0:
        raise ValueError("no bandwidth candidates")
    scores = np.array([gcv_score(dataset, SmootherSpec(family, order, h)) for h in cand])
    finite = np.isfinite(scores)
    if not finite.any():
        raise NoFeasibleBandwidth("every bandwidth candidate gives an infinite GCV score")
    low = scores[finite].min()
    scale = np.mean([s.values @ s.values for s in dataset.subjects])
    # scores equal up to rounding count as ties
    tol = TIE_RTOL * max(low, TIE_RTOL * scale)
    best = np.flatnonzero(finite & (scores <= low + tol))[0]
    return GcvResult(candidates=cand, scores=scores, h_star=float(cand[best]))
