"""Scalar-function machinery applied to the scaled stiffness operator.

Polynomials in ``S`` are applied matrix-free: the spectral polynomial ``P``
by Horner's scheme in the monomial basis, every other function (``1/sqrt P``,
``log P``, ``log``) through a Chebyshev expansion evaluated with Clenshaw's
recurrence on the affinely mapped operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.polynomial.chebyshev as npcheb
import numpy.polynomial.polynomial as nppoly
import scipy.sparse as sp
from scipy.fft import dct

from .errors import (
    DimensionMismatch,
    IntervalTooSmall,
    NonFiniteTarget,
    NonPositiveLowerBound,
)


@dataclass(frozen=True, eq=False)
class SpectralPolynomial:
    """Polynomial ``sum_k coeffs[k] x^k`` (trailing zeros trimmed)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coefficients must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite polynomial coefficient")
        c = nppoly.polytrim(c, 0.0) if np.any(c) else np.zeros(1)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x):
        return nppoly.polyval(x, self.coeffs)

    def scaled(self, factor):
        return SpectralPolynomial(self.coeffs * factor)

    def __repr__(self):
        return f"SpectralPolynomial({self.coeffs.tolist()})"


@dataclass(frozen=True, eq=False)
class PositivePolynomialParam:
    """``P(x) = P1(x)^2 + x P2(x)^2 + epsilon``, positive on the half-line."""

    p1: np.ndarray
    p2: np.ndarray
    epsilon: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p1", np.atleast_1d(np.asarray(self.p1, dtype=float)))
        object.__setattr__(self, "p2", np.atleast_1d(np.asarray(self.p2, dtype=float)))
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


def expand_positive_poly(param: PositivePolynomialParam) -> SpectralPolynomial:
    sq1 = nppoly.polymul(param.p1, param.p1)
    sq2 = nppoly.polymul([0.0, 1.0], nppoly.polymul(param.p2, param.p2))
    total = nppoly.polyadd(sq1, sq2)
    total = nppoly.polyadd(total, [param.epsilon])
    return SpectralPolynomial(total)


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Spectral polynomial ``P`` (density ``1/P``) plus nugget variance."""

    poly: SpectralPolynomial
    tau2: float
    param: PositivePolynomialParam | None = None

    def __post_init__(self):
        if not isinstance(self.poly, SpectralPolynomial):
            object.__setattr__(self, "poly", SpectralPolynomial(self.poly))
        if not (self.tau2 > 0 and np.isfinite(self.tau2)):
            raise ValueError("tau2 must be positive and finite")

    @classmethod
    def from_param(cls, param, tau2):
        return cls(expand_positive_poly(param), float(tau2), param)

    @classmethod
    def from_coefficients(cls, coeffs, tau2):
        return cls(SpectralPolynomial(coeffs), float(tau2))


# ---------------------------------------------------------------------------
# Chebyshev approximation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChebyshevApprox:
    interval: tuple
    coeffs: np.ndarray
    target_id: str = ""
    sup_error_estimate: float = float("nan")

    @property
    def degree(self):
        return self.coeffs.size - 1

    def to_unit(self, x):
        a, b = self.interval
        return (2.0 * np.asarray(x, dtype=float) - (a + b)) / (b - a)

    def __call__(self, x):
        return npcheb.chebval(self.to_unit(x), self.coeffs)


def chebyshev_fit(target, interval, degree, target_id="", n_check=100_000):
    """Interpolate ``target`` at the ``degree + 1`` Chebyshev points of ``interval``.

    Coefficients come from a type-II discrete cosine transform of the nodal
    values.  ``sup_error_estimate`` is the maximum deviation on an
    ``n_check``-point uniform grid (NaN when ``n_check`` is 0).
    """
    a, b = (float(interval[0]), float(interval[1]))
    if not a < b:
        raise ValueError(f"empty interval [{a}, {b}]")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    N = int(degree) + 1
    t = np.cos(np.pi * (np.arange(N) + 0.5) / N)
    x = 0.5 * (a + b) + 0.5 * (b - a) * t
    with np.errstate(all="ignore"):
        fx = np.asarray(target(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise NonFiniteTarget(f"target not finite on [{a}, {b}]")
    if np.all(fx == fx[0]):
        c = np.zeros(N)
        c[0] = fx[0]
    else:
        c = dct(fx, type=2) / N
        c[0] *= 0.5
    approx = ChebyshevApprox((a, b), c, target_id)
    if n_check:
        grid = np.linspace(a, b, n_check)
        with np.errstate(all="ignore"):
            fg = np.asarray(target(grid), dtype=float)
        if not np.all(np.isfinite(fg)):
            raise NonFiniteTarget(f"target not finite on [{a}, {b}]")
        err = float(np.max(np.abs(approx(grid) - fg)))
        approx = ChebyshevApprox((a, b), c, target_id, err)
    return approx


def chebyshev_fit_adaptive(target, interval, start=128, max_degree=1024, tail_tol=1e-8,
                           target_id="", n_check=100_000):
    """Double the degree until the coefficient tail is negligible.

    The tail is the last eighth of the coefficients; it is compared with
    ``tail_tol`` times the largest coefficient.
    """
    deg = min(int(start), int(max_degree))
    while True:
        approx = chebyshev_fit(target, interval, deg, target_id, n_check=0)
        c = np.abs(approx.coeffs)
        tail = c[-max(8, c.size // 8):]
        if tail.max() <= tail_tol * max(c.max(), 1e-300) or deg >= max_degree:
            break
        deg = min(2 * deg, int(max_degree))
    if n_check:
        approx = chebyshev_fit(target, interval, deg, target_id, n_check=n_check)
    c = approx.coeffs
    keep = np.nonzero(np.abs(c) > 1e-16 * np.abs(c).max())[0]
    last = int(keep[-1]) + 1 if keep.size else 1
    if last < c.size:
        approx = ChebyshevApprox(approx.interval, c[:last].copy(), target_id, approx.sup_error_estimate)
    return approx


def _as_operator(op):
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return lambda v: op @ v
    if callable(op):
        return op
    raise TypeError("operator must be a matrix or a callable")


def apply_chebyshev(op, approx: ChebyshevApprox, v, spectrum=None):
    """Evaluate ``h(op) v`` for the Chebyshev approximation ``h``.

    ``spectrum`` is an interval known to contain the eigenvalues of ``op``; for
    a (positive semi-definite) sparse matrix it defaults to
    ``[0, eigen_upper_bound_S(op)]``.  It must lie inside ``approx.interval``.
    ``v`` may be a vector or an ``(n, k)`` block of vectors.
    """
    a, b = approx.interval
    if spectrum is None:
        if not (sp.issparse(op) or isinstance(op, np.ndarray)):
            raise ValueError("spectrum interval required for callable operators")
        spectrum = (0.0, eigen_upper_bound_S(op))
    lo, hi = spectrum
    slack = 1e-12 * max(abs(a), abs(b), 1.0)
    if lo < a - slack or hi > b + slack:
        raise IntervalTooSmall(
            f"spectrum [{lo:.6g}, {hi:.6g}] not inside approximation interval [{a:.6g}, {b:.6g}]"
        )
    matvec = _as_operator(op)
    v = np.asarray(v, dtype=float)
    c = approx.coeffs
    scale, shift = 2.0 / (b - a), (a + b) / (b - a)

    def T(x):
        return scale * matvec(x) - shift * x

    if c.size == 1:
        return c[0] * v
    b1 = np.zeros_like(v)
    b2 = np.zeros_like(v)
    for k in range(c.size - 1, 0, -1):
        b0 = c[k] * v + 2.0 * T(b1) - b2
        b2, b1 = b1, b0
    return c[0] * v + T(b1) - b2


# ---------------------------------------------------------------------------
# eigenvalue intervals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("lo must not exceed hi")

    def __iter__(self):
        return iter((self.lo, self.hi))


def gershgorin_interval(B) -> EigenInterval:
    B = sp.csr_matrix(B)
    diag = B.diagonal()
    radius = np.asarray(abs(B).sum(axis=1)).ravel() - np.abs(diag)
    return EigenInterval(float(np.min(diag - radius)), float(np.max(diag + radius)))


def eigen_upper_bound_S(S) -> float:
    """``min(sqrt(trace(S^T S)), Gershgorin max)``, an upper bound on lambda_max."""
    S = sp.csr_matrix(S)
    frob = float(np.sqrt(np.sum(S.data**2)))
    return min(frob, gershgorin_interval(S).hi)


def poly_extrema(poly: SpectralPolynomial, lo, hi, n_grid=10_000):
    """Inf and sup of ``poly`` on ``[lo, hi]`` from a dense grid, the endpoints and
    the real critical points inside the interval."""
    pts = [np.linspace(lo, hi, n_grid), np.array([lo, hi], dtype=float)]
    if poly.degree >= 2:
        crit = np.roots(nppoly.polyder(poly.coeffs)[::-1])
        crit = crit[np.abs(crit.imag) < 1e-12].real
        pts.append(crit[(crit >= lo) & (crit <= hi)])
    vals = poly(np.concatenate(pts))
    return float(vals.min()), float(vals.max())


def eigen_interval_A(model: SpectralModel, bundle, lam_max_S, n_grid=10_000) -> EigenInterval:
    """Interval containing the spectrum of ``tau2 sqrtC P(S) sqrtC + M_D^T M_D``."""
    inf_p, sup_p = poly_extrema(model.poly, 0.0, float(lam_max_S), n_grid)
    if inf_p <= 0:
        raise NonPositiveLowerBound(
            f"P has infimum {inf_p:.3g} <= 0 on [0, {lam_max_S:.6g}]"
        )
    c2 = bundle.mass.diag
    lo = model.tau2 * float(c2.min()) * inf_p
    colsum = float(np.asarray(bundle.M_D.sum(axis=0)).max()) if bundle.p else 0.0
    hi = model.tau2 * float(c2.max()) * sup_p + colsum
    return EigenInterval(lo, hi)


# ---------------------------------------------------------------------------
# products with alpha D P(B) D^T + M^T M
# ---------------------------------------------------------------------------


def poly_shifted_product(D, B, coeffs, alpha, M, v):
    """Horner evaluation of ``(alpha D P(B) D^T + M^T M) v``.

    ``D`` is either a 1-D array (diagonal matrix) or a matrix; ``M`` may be
    ``None``.  ``v`` may be a vector or an ``(n, k)`` block.
    """
    v = np.asarray(v, dtype=float)
    n = B.shape[0]
    if v.shape[0] != n:
        raise DimensionMismatch(f"vector of length {v.shape[0]} for operator of size {n}")
    diag = np.ndim(D) == 1
    if diag:
        Dd = np.asarray(D, dtype=float)
        if Dd.shape[0] != n:
            raise DimensionMismatch("D has wrong size")
        Dd = Dd if v.ndim == 1 else Dd[:, None]
    if M is not None and M.shape[0]:
        if M.shape[1] != n:
            raise DimensionMismatch(f"M has {M.shape[1]} columns, operator size {n}")
        x = M.T @ (M @ v)
    else:
        x = None
    c = np.asarray(coeffs, dtype=float)
    w = Dd * v if diag else D.T @ v
    y = c[-1] * w
    for k in range(c.size - 2, -1, -1):
        y = c[k] * w + B @ y
    out = alpha * (Dd * y if diag else D @ y)
    return out if x is None else out + x


def apply_poly_shifted(bundle, alpha, P, M, v):
    """``(alpha sqrtC P(S) sqrtC + M^T M) v`` for a bundle's operators."""
    coeffs = P.coeffs if isinstance(P, SpectralPolynomial) else P
    return poly_shifted_product(bundle.sqrtC, bundle.S, coeffs, alpha, M, v)
