"""Kernel families, their moment functionals, and the LPK equivalent kernel."""

from dataclasses import dataclass
from math import pi, sqrt
from typing import Callable, Dict

import numpy as np
from scipy.integrate import simpson

from .errors import SingularSystem

FAMILIES = ("gaussian", "epanechnikov", "uniform")
# quadrature support; Gaussian tail mass beyond 8 is below 1e-14
_SUPPORT = {"gaussian": 8.0, "epanechnikov": 1.0, "uniform": 1.0}
_NQUAD = 2001


@dataclass(frozen=True)
class SmootherSpec:
    """Kernel family, odd local polynomial order ``p`` and bandwidth ``h``."""

    family: str = "gaussian"
    order: int = 1
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        if int(self.order) != self.order or self.order < 1 or self.order % 2 == 0:
            raise ValueError(f"order must be an odd positive integer, got {self.order}")
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    def with_bandwidth(self, h):
        return SmootherSpec(self.family, self.order, float(h))

    @property
    def support(self):
        return _SUPPORT[self.family]


def _family(spec):
    return spec if isinstance(spec, str) else spec.family


def eval_kernel(spec, t):
    """Evaluate the unscaled kernel ``K(t)``; vectorised over ``t``."""
    fam = _family(spec)
    t = np.asarray(t, dtype=float)
    if fam == "gaussian":
        out = np.exp(-0.5 * t * t) / sqrt(2 * pi)
    elif fam == "epanechnikov":
        out = np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t), 0.0)
    elif fam == "uniform":
        out = np.where(np.abs(t) <= 1.0, 0.5, 0.0)
    else:
        raise ValueError(f"unknown kernel family {fam!r}")
    return out if out.ndim else float(out)


def _double_factorial(k):
    return 1 if k <= 0 else k * _double_factorial(k - 2)


def _moment(fam, r):
    if r % 2:
        return 0.0
    if fam == "gaussian":
        return float(_double_factorial(r - 1))
    if fam == "epanechnikov":
        return 0.75 * (2.0 / (r + 1) - 2.0 / (r + 3))
    return 1.0 / (r + 1)


def _self_convolution(fam):
    if fam == "gaussian":
        return lambda t: np.exp(-np.asarray(t, dtype=float) ** 2 / 4.0) / (2.0 * sqrt(pi))
    if fam == "epanechnikov":
        def k1(t):
            a = np.abs(np.asarray(t, dtype=float))
            return np.where(a <= 2.0, 3.0 / 160.0 * (2.0 - a) ** 3 * (a * a + 6.0 * a + 4.0), 0.0)
        return k1

    def k1(t):
        a = np.abs(np.asarray(t, dtype=float))
        return np.where(a <= 2.0, (2.0 - a) / 4.0, 0.0)
    return k1


_VARIANCE = {"gaussian": 1.0 / (2.0 * sqrt(pi)), "epanechnikov": 0.6, "uniform": 0.5}


@dataclass(frozen=True)
class KernelFunctionals:
    """Moments ``B[r] = int K t^r``, ``V = int K^2`` and ``K1(t) = int K(s)K(s+t) ds``."""

    B: Dict[int, float]
    V: float
    K1: Callable


@dataclass(frozen=True)
class EquivalentKernel:
    """Asymptotic equivalent kernel of the order-``p`` local polynomial fit."""

    spec: SmootherSpec
    S: np.ndarray
    _coef: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        powers = t[..., None] ** np.arange(self.spec.order + 1)
        return (powers @ self._coef) * eval_kernel(self.spec, t)

    @property
    def support(self):
        return self.spec.support


def _quadrature_nodes(support):
    return np.linspace(-support, support, _NQUAD)


def _functionals_by_quadrature(kern, support, max_r):
    x = _quadrature_nodes(support)
    kx = kern(x)
    B = {r: float(simpson(kx * x ** r, x=x)) for r in range(max_r + 1)}
    V = float(simpson(kx * kx, x=x))

    def K1(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        # s + t stays inside [-2 support, 2 support]; kern vanishes or is negligible outside
        vals = np.array([simpson(kx * kern(x + ti), x=x) for ti in t.ravel()]).reshape(t.shape)
        return vals if vals.size > 1 else float(vals[0])

    return KernelFunctionals(B=B, V=V, K1=K1)


def kernel_functionals(kernel, max_r=None):
    """Kernel functionals for a :class:`SmootherSpec` or an :class:`EquivalentKernel`.

    Closed forms are used for the three base families; equivalent kernels
    are integrated numerically (composite Simpson, 2001 nodes).
    """
    if isinstance(kernel, EquivalentKernel):
        p = kernel.spec.order
        max_r = p + 1 if max_r is None else max_r
        return _functionals_by_quadrature(kernel, kernel.support, max_r)
    fam = _family(kernel)
    if max_r is None:
        max_r = kernel.order + 1 if isinstance(kernel, SmootherSpec) else 2
    if isinstance(kernel, SmootherSpec) and max_r < kernel.order + 1:
        raise ValueError(f"max_r must be at least p+1 = {kernel.order + 1}")
    B = {r: _moment(fam, r) for r in range(max_r + 1)}
    return KernelFunctionals(B=B, V=_VARIANCE[fam], K1=_self_convolution(fam))


def equivalent_kernel(spec):
    """Build ``K*(t) = e1^T S^{-1} (1, t, ..., t^p)^T K(t)`` with ``S_ab = B(a+b)``."""
    p = spec.order
    B = kernel_functionals(spec, 2 * p).B
    S = np.array([[B[a + b] for b in range(p + 1)] for a in range(p + 1)])
    if 1.0 / np.linalg.cond(S) <= 1e-12:
        raise SingularSystem("kernel moment matrix is singular")
    e1 = np.zeros(p + 1)
    e1[0] = 1.0
    coef = np.linalg.solve(S, e1)
    return EquivalentKernel(spec=spec, S=S, _coef=coef)


def equivalent_kernel_constants(spec):
    """Return ``(B_{p+1}(K*), V(K*))`` used by the reconstruction MSE formula."""
    ek = equivalent_kernel(spec)
    if spec.order == 1:
        f = kernel_functionals(spec, 2)
        return f.B[2], f.V
    f = kernel_functionals(ek, spec.order + 1)
    return f.B[spec.order + 1], f.V
