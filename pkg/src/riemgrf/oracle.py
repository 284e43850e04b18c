"""Dense reference computations for small instances, and spectral-density tools.

Everything here materialises n x n matrices and is meant for validation:
eigendecomposition of ``S``, both closed forms of the conditional moments,
exact log-determinants, and covariance curves obtained from ``1/P`` by
Fourier inversion.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.integrate as integrate
import scipy.linalg as la
from scipy.special import gamma, kv

from .errors import TooLarge
from .spectral import SpectralPolynomial

DEFAULT_CAP = 2000


class AliasWarning(UserWarning):
    """Spectral density not negligible at the edge of the frequency grid."""


@dataclass(frozen=True, eq=False)
class DenseModelMatrices:
    Sigma: np.ndarray
    Q: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray


def _check_size(n, cap):
    if n > cap:
        raise TooLarge(f"dense oracle refuses n={n} (cap {cap})")


def dense_matrices(bundle, f, cap=DEFAULT_CAP):
    """Covariance ``sqrtC^-1 f(S) sqrtC^-1`` and precision ``sqrtC (1/f)(S) sqrtC``.

    ``f`` is a scalar function of the eigenvalues of ``S``; a
    :class:`SpectralPolynomial` ``P`` is interpreted as ``f = 1/P``.
    """
    n = bundle.n
    _check_size(n, cap)
    if isinstance(f, SpectralPolynomial):
        poly = f
        f = lambda lam: 1.0 / poly(lam)  # noqa: E731
    lam, V = la.eigh(bundle.S.toarray())
    fl = np.asarray(f(np.clip(lam, 0.0, None)), dtype=float) * np.ones_like(lam)
    inv = 1.0 / bundle.sqrtC
    W = V * inv[:, None]
    Sigma = (W * fl) @ W.T
    U = V * bundle.sqrtC[:, None]
    Q = (U / fl) @ U.T
    Sigma = 0.5 * (Sigma + Sigma.T)
    Q = 0.5 * (Q + Q.T)
    return DenseModelMatrices(Sigma, Q, lam, V)


def dense_model(bundle, model, cap=DEFAULT_CAP):
    return dense_matrices(bundle, model.poly, cap)


@dataclass(frozen=True, eq=False)
class ConditionalForms:
    """Both closed forms of ``E[Z|Y]`` and ``cov[Z|Y]``."""

    mean_cov_form: np.ndarray   # Sigma M^T (M Sigma M^T + tau2 I)^-1 Y
    mean_prec_form: np.ndarray  # (tau2 Q + M^T M)^-1 M^T Y
    cov_cov_form: np.ndarray
    cov_prec_form: np.ndarray

    def discrepancy(self):
        def rel(a, b):
            scale = max(np.linalg.norm(a), np.linalg.norm(b))
            return float(np.linalg.norm(a - b) / scale) if scale > 0 else 0.0

        return (rel(self.mean_cov_form, self.mean_prec_form),
                rel(self.cov_cov_form, self.cov_prec_form))


def dense_conditional_forms(bundle, model, Y, dense=None, cap=DEFAULT_CAP):
    dense = dense or dense_model(bundle, model, cap)
    Sigma, Q = dense.Sigma, dense.Q
    M = bundle.M_D.toarray()
    Y = np.asarray(Y, dtype=float)
    p, tau2 = M.shape[0], model.tau2
    SMt = Sigma @ M.T
    K = M @ SMt + tau2 * np.eye(p)
    cf = la.cho_factor(K)
    mean1 = SMt @ la.cho_solve(cf, Y)
    cov1 = Sigma - SMt @ la.cho_solve(cf, SMt.T)
    A = tau2 * Q + M.T @ M
    af = la.cho_factor(A)
    mean2 = la.cho_solve(af, M.T @ Y)
    cov2 = tau2 * la.cho_solve(af, np.eye(bundle.n))
    sym = lambda C: 0.5 * (C + C.T)  # noqa: E731
    return ConditionalForms(mean1, mean2, sym(cov1), sym(cov2))


def dense_conditional(bundle, model, Y, tol=1e-9, dense=None, cap=DEFAULT_CAP):
    """``(E[Z|Y], cov[Z|Y])`` after cross-checking the two closed forms.

    Raises ``AssertionError`` when the forms disagree by more than ``tol``
    (relative).
    """
    forms = dense_conditional_forms(bundle, model, Y, dense, cap)
    dm, dc = forms.discrepancy()
    if dm > tol or dc > tol:
        raise AssertionError(f"closed forms disagree: mean {dm:.2e}, covariance {dc:.2e}")
    return forms.mean_prec_form, forms.cov_prec_form


# ---------------------------------------------------------------------------
# dense likelihood pieces
# ---------------------------------------------------------------------------


def dense_sigma_Y(bundle, model, dense=None):
    dense = dense or dense_model(bundle, model)
    M = bundle.M_D.toarray()
    return M @ dense.Sigma @ M.T + model.tau2 * np.eye(bundle.p)


def dense_logdet_QY(bundle, model, dense=None):
    """``log|Q_Y| = -log|Sigma_Y|`` by Cholesky."""
    SY = dense_sigma_Y(bundle, model, dense)
    if SY.shape[0] == 0:
        return 0.0
    c, low = la.cho_factor(SY)
    return -2.0 * float(np.sum(np.log(np.diag(c))))


def dense_logdet_decomposition(bundle, model, dense=None):
    """``log|P(S)| + 2 log|sqrtC| + (n - p) log tau2 - log|A|`` evaluated densely."""
    dense = dense or dense_model(bundle, model)
    lam = np.clip(dense.eigvals, 0.0, None)
    logdet_P = float(np.sum(np.log(model.poly(lam))))
    M = bundle.M_D.toarray()
    A = model.tau2 * dense.Q + M.T @ M
    sign, logdet_A = np.linalg.slogdet(A)
    return (logdet_P + 2.0 * float(np.sum(np.log(bundle.sqrtC)))
            + (bundle.n - bundle.p) * math.log(model.tau2) - float(logdet_A))


def dense_quadratic_form(bundle, model, Y, dense=None):
    SY = dense_sigma_Y(bundle, model, dense)
    Y = np.asarray(Y, dtype=float)
    return float(Y @ la.cho_solve(la.cho_factor(SY), Y))


def dense_log_likelihood(bundle, model, Y, dense=None):
    dense = dense or dense_model(bundle, model)
    p = bundle.p
    return -0.5 * (p * math.log(2 * math.pi) - dense_logdet_QY(bundle, model, dense)
                   + dense_quadratic_form(bundle, model, Y, dense))


def dense_generalized_least_squares(bundle, model, X, Ytilde, dense=None):
    QY = la.inv(dense_sigma_Y(bundle, model, dense))
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    return la.solve(X.T @ QY @ X, X.T @ QY @ np.asarray(Ytilde, dtype=float))


# ---------------------------------------------------------------------------
# covariance curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CovarianceCurve:
    lags: np.ndarray
    values: np.ndarray

    @property
    def sill(self):
        return float(self.values[0])

    def normalized(self):
        return CovarianceCurve(self.lags, self.values / self.values[0])

    def at(self, h):
        return np.interp(h, self.lags, self.values)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "value"])
            for h, v in zip(self.lags, self.values):
                w.writerow([repr(float(h)), repr(float(v))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        arr = np.array(rows, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])


def _density(P):
    poly = P if isinstance(P, SpectralPolynomial) else SpectralPolynomial(P)
    return lambda w: 1.0 / poly(np.asarray(w, dtype=float) ** 2)


def _cutoff_frequency(f, rel=1e-7):
    w = np.concatenate([[0.0], np.logspace(-4, 5, 4000)])
    fw = f(w)
    if np.any(fw <= 0) or not np.all(np.isfinite(fw)):
        raise ValueError("P must be positive on the sampled frequency range")
    big = np.nonzero(fw > rel * fw.max())[0]
    return float(w[big[-1] + 1]) if big[-1] + 1 < w.size else float(w[-1])


def covariance_curve_fft(P, d=2, grid=1024, omega_max=None, max_lag=None, n_lags=200):
    """Isotropic covariance whose spectral density is ``omega -> 1/P(|omega|^2)``.

    d=2 uses a ``grid x grid`` inverse FFT and reads the profile along the
    first axis.  d=3 evaluates the radial (Hankel-type) integral
    ``C(r) = (2 pi^2 r)^-1 int f(k) k sin(k r) dk`` by adaptive Fourier
    quadrature on ``n_lags`` lags up to ``max_lag``.
    """
    f = _density(P)
    if omega_max is None:
        omega_max = _cutoff_frequency(f)
    peak = f(np.linspace(0.0, omega_max, 2048)).max()
    if f(omega_max) > 1e-6 * peak:
        warnings.warn(
            f"spectral density at the grid edge is {f(omega_max) / peak:.1e} of its peak",
            AliasWarning,
            stacklevel=2,
        )
    if d == 2:
        N = int(grid)
        dx = math.pi / omega_max
        w = 2 * math.pi * np.fft.fftfreq(N, d=dx)
        dw = w[1] - w[0]
        W2 = w[:, None] ** 2 + w[None, :] ** 2
        poly = P if isinstance(P, SpectralPolynomial) else SpectralPolynomial(P)
        F = 1.0 / poly(W2)
        C = np.fft.ifft2(F).real * N * N * (dw / (2 * math.pi)) ** 2
        profile = C[: N // 2 + 1, 0]
        if abs(profile[-1]) > 1e-3 * abs(profile[0]):
            warnings.warn("covariance has not decayed within half the lag period; "
                          "increase grid", AliasWarning, stacklevel=2)
        lags = dx * np.arange(N // 2 + 1)
        if max_lag is not None:
            keep = lags <= max_lag + 1e-12
            lags, profile = lags[keep], profile[keep]
        return CovarianceCurve(lags, profile)
    if d == 3:
        if max_lag is None:
            max_lag = 40.0 / max(_cutoff_frequency(f, 0.5), 1e-12)
        lags = np.linspace(0.0, max_lag, n_lags)
        vals = np.empty_like(lags)
        vals[0] = integrate.quad(lambda k: f(k) * k * k, 0, np.inf, limit=500)[0] / (2 * math.pi**2)
        for i, r in enumerate(lags[1:], start=1):
            val = integrate.quad(lambda k: f(k) * k, 0, np.inf, weight="sin", wvar=r, limlst=200)[0]
            vals[i] = val / (2 * math.pi**2 * r)
        return CovarianceCurve(lags, vals)
    raise ValueError("d must be 2 or 3")


def matern_covariance(h, kappa, nu, sigma2=1.0):
    """``sigma2 2^(1-nu) / Gamma(nu) (kappa h)^nu K_nu(kappa h)``."""
    h = np.asarray(h, dtype=float)
    x = kappa * np.abs(h)
    with np.errstate(invalid="ignore", over="ignore"):
        val = sigma2 * 2.0 ** (1 - nu) / gamma(nu) * x**nu * kv(nu, x)
    val = np.where(x == 0, sigma2, val)
    val = np.where(np.isnan(val) & (x > 0), 0.0, val)
    return val if val.ndim else float(val)


def matern_variance(kappa, nu, d):
    """Marginal variance of the field with density ``(kappa^2 + |w|^2)^-(nu + d/2)``."""
    return gamma(nu) / (gamma(nu + d / 2) * (4 * math.pi) ** (d / 2) * kappa ** (2 * nu))


def matern_polynomial(kappa, alpha):
    """``P(lambda) = (kappa^2 + lambda)^alpha`` for integer ``alpha``."""
    coeffs = [math.comb(alpha, k) * kappa ** (2 * (alpha - k)) for k in range(alpha + 1)]
    return SpectralPolynomial(coeffs)


def effective_range(kappa, nu):
    """Distance where the Matérn correlation is about 0.13, ``sqrt(8 nu) / kappa``."""
    return math.sqrt(8 * nu) / kappa
