"""Small dense linear algebra, quadrature and reproducible random streams."""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import GridMismatch, NotPositiveDefinite, NotSymmetric, SingularSystem

RCOND_MIN = 1e-12
# above this size the LAPACK driver replaces cyclic Jacobi
JACOBI_MAX_SIZE = 64


def solve_weighted_ls(basis, weights, response):
    """Weighted least squares ``argmin sum_j w_j (y_j - z_j^T a)^2``.

    Parameters
    ----------
    basis : array_like, shape (n, q)
    weights : array_like, shape (n,)
        Nonnegative weights.
    response : array_like, shape (n,)

    Returns
    -------
    ndarray, shape (q,)

    Raises
    ------
    SingularSystem
        If fewer than ``q`` rows carry positive weight or the weighted Gram
        matrix has reciprocal condition number below ``RCOND_MIN``.
    """
    Z = np.atleast_2d(np.asarray(basis, dtype=float))
    if Z.shape[0] == 1 and np.ndim(basis) == 1:
        Z = Z.T
    w = np.asarray(weights, dtype=float)
    y = np.asarray(response, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    q = Z.shape[1]
    if np.count_nonzero(w > 0) < q:
        raise SingularSystem(f"only {np.count_nonzero(w > 0)} positively weighted rows for {q} unknowns")
    sw = np.sqrt(w)
    Q, R = np.linalg.qr(sw[:, None] * Z)
    # cond(Z^T W Z) = cond(R)^2; solving through R avoids squaring it
    if 1.0 / np.linalg.cond(R) ** 2 <= RCOND_MIN:
        raise SingularSystem("weighted Gram matrix is numerically singular")
    return np.linalg.solve(R, Q.T @ (sw * y))


@dataclass(frozen=True)
class SymmetricEigen:
    """Eigenvalues (descending) and orthonormal eigenvectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self):
        return (self.vectors * self.values) @ self.vectors.T


def _check_symmetric(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale > 0 and np.max(np.abs(A - A.T)) > 1e-10 * scale:
        raise NotSymmetric("matrix is not symmetric")
    return 0.5 * (A + A.T)


def jacobi_eigen(A, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Each rotation zeroes one off-diagonal pair; sweeps repeat until the
    off-diagonal Frobenius norm falls below ``tol`` times the total norm.
    """
    A = _check_symmetric(A).copy()
    n = A.shape[0]
    V = np.eye(n)
    total = np.linalg.norm(A)
    if total == 0.0 or n == 1:
        return _sorted(np.diag(A).copy(), V)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * total:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return _sorted(np.diag(A).copy(), V)


def _sorted(values, vectors):
    order = np.argsort(values)[::-1]
    return SymmetricEigen(values=values[order], vectors=vectors[:, order])


def sym_eigen(A, method="auto"):
    """Eigendecomposition of a symmetric matrix, values sorted descending.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_SIZE`` rows, LAPACK ``eigh`` above).
    """
    A = _check_symmetric(A)
    if method == "auto":
        method = "jacobi" if A.shape[0] <= JACOBI_MAX_SIZE else "lapack"
    if method == "jacobi":
        return jacobi_eigen(A)
    if method != "lapack":
        raise ValueError(f"unknown eigen method {method!r}")
    values, vectors = np.linalg.eigh(A)
    return _sorted(values, vectors)


def inv_sqrt_psd(A):
    """Symmetric inverse square root ``B`` with ``B A B = I``."""
    eig = sym_eigen(np.atleast_2d(A))
    lam = eig.values
    if lam[-1] <= 1e-12 * max(lam[0], 0.0) or lam[0] <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {lam[-1]:.3g} relative to largest {lam[0]:.3g}")
    V = eig.vectors
    return (V / np.sqrt(lam)) @ V.T


def trapezoid_weights(grid):
    """Composite trapezoid quadrature weights for ``grid``."""
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise GridMismatch("grid needs at least two points")
    d = np.diff(g)
    if np.any(d <= 0):
        raise GridMismatch("grid must be strictly increasing")
    w = np.zeros_like(g)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def trapezoid_integrate(values, grid):
    """Composite trapezoid rule; ``values`` may carry leading batch axes."""
    v = np.asarray(values, dtype=float)
    g = np.asarray(grid, dtype=float)
    if v.shape[-1] != g.shape[0]:
        raise GridMismatch(f"{v.shape[-1]} values for {g.shape[0]} grid points")
    return v @ trapezoid_weights(g)


@dataclass(frozen=True)
class RngStream:
    """Independent, reproducible random stream keyed by ``(seed, stream_id)``.

    Built on a counter-based Philox generator seeded through
    ``SeedSequence(seed, spawn_key=...)``, so distinct keys give
    independent streams. Not safe to share between concurrent tasks; use
    :meth:`substream` to hand each task its own.
    """

    seed: int
    stream_id: int
    path: Tuple[int, ...] = ()
    gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),) + tuple(self.path))
        object.__setattr__(self, "gen", np.random.Generator(np.random.Philox(ss)))

    def substream(self, index):
        return RngStream(self.seed, self.stream_id, self.path + (int(index),))


def spawn_stream(seed, stream_id=0):
    return RngStream(int(seed), int(stream_id))
