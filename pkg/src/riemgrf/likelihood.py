"""Gaussian log-likelihood of noisy observations and its maximisation.

With ``A = tau2 Q + M_D^T M_D``,

    Y^T Q_Y Y  = tau2^-1 (Y^T Y - Y^T M_D A^-1 M_D^T Y)
    log|Q_Y|   = log|P(S)| + 2 log|sqrtC| + (n - p) log tau2 - log|A|

The quadratic form takes one CG solve.  Both log-determinants are traces of
matrix functions, estimated with Hutchinson probes pushed through Chebyshev
expansions of ``log P`` (on the spectrum of ``S``) and ``log`` (on the
spectrum of ``A``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import AllRestartsFailed, DimensionMismatch, GRFError, RankDeficient
from .fieldops import PROBES, RESTARTS, conditional_mean, kriging_operator, substream
from .solver import SolverConfig
from .spectral import (
    PositivePolynomialParam,
    SpectralModel,
    apply_chebyshev,
    chebyshev_fit,
    eigen_interval_A,
    eigen_upper_bound_S,
)

log = logging.getLogger(__name__)

DEFAULT_LOG_DEGREE = 256


@dataclass(frozen=True, eq=False)
class ThetaVector:
    p1: np.ndarray
    p2: np.ndarray
    log_tau2: float

    def __post_init__(self):
        p1 = np.atleast_1d(np.asarray(self.p1, dtype=float))
        p2 = np.atleast_1d(np.asarray(self.p2, dtype=float))
        if not (np.all(np.isfinite(p1)) and np.all(np.isfinite(p2)) and math.isfinite(self.log_tau2)):
            raise ValueError("theta entries must be finite")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)
        object.__setattr__(self, "log_tau2", float(self.log_tau2))

    @property
    def tau2(self):
        return math.exp(self.log_tau2)

    def pack(self):
        return np.concatenate([self.p1, self.p2, [self.log_tau2]])

    @classmethod
    def unpack(cls, x, n1, n2):
        x = np.asarray(x, dtype=float)
        if x.size != n1 + n2 + 1:
            raise DimensionMismatch(f"theta of length {x.size}, expected {n1 + n2 + 1}")
        return cls(x[:n1], x[n1 : n1 + n2], float(x[-1]))

    def model(self, epsilon=1e-3):
        return SpectralModel.from_param(PositivePolynomialParam(self.p1, self.p2, epsilon), self.tau2)


@dataclass(frozen=True)
class LogDetEstimate:
    value: float
    num_probes: int
    probe_seed: int | None
    samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.num_probes < 1:
            raise ValueError("at least one probe is required")

    @property
    def standard_error(self):
        if self.samples is None or self.samples.size < 2:
            return float("nan")
        return float(np.std(self.samples, ddof=1) / math.sqrt(self.samples.size))


@dataclass
class FitReport:
    theta_hat: ThetaVector
    loglik: float
    restarts: int
    trace: list = field(default_factory=list, repr=False)
    beta_hat: np.ndarray | None = None
    model: SpectralModel | None = None
    probe_seed: int | None = None
    num_probes: int = 0
    evaluations: int = 0


# ---------------------------------------------------------------------------
# probes and traces
# ---------------------------------------------------------------------------


def draw_probes(n, M, seed, counter=0, kind="rademacher"):
    """``(n, M)`` block of zero-mean unit-variance probe vectors."""
    rng = substream(seed, PROBES, counter)
    if kind == "rademacher":
        return rng.integers(0, 2, size=(n, M)).astype(float) * 2.0 - 1.0
    if kind == "gaussian":
        return rng.standard_normal((n, M))
    raise ValueError(f"unknown probe distribution {kind!r}")


def hutchinson_samples(op, approx, W, spectrum, batch=512):
    """Per-probe quadratic forms ``w^T h(op) w`` for the columns of ``W``."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    out = np.empty(W.shape[1])
    for a in range(0, W.shape[1], batch):
        block = W[:, a : a + batch]
        out[a : a + block.shape[1]] = np.sum(block * apply_chebyshev(op, approx, block, spectrum), axis=0)
    return out


def _widen(lo, hi):
    # a constant spectrum (e.g. A = tau2 I) still needs a non-empty interval
    pad = max(1e-9 * abs(hi), 1e-12)
    return (lo, lo + pad) if hi - lo < pad else (lo, hi)


# ---------------------------------------------------------------------------
# likelihood pieces
# ---------------------------------------------------------------------------


def _check_obs(bundle, Y):
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (bundle.p,):
        raise DimensionMismatch(f"{Y.size} observations for {bundle.p} design rows")
    return Y


def quadratic_form(bundle, model, Y, solver=None, return_report=False):
    """``Y^T Q_Y Y`` through one solve with ``A``."""
    Y = _check_obs(bundle, Y)
    X, report = conditional_mean(bundle, model, Y, solver, return_report=True)
    MtY = bundle.M_D.T @ Y if bundle.p else np.zeros(bundle.n)
    val = (float(np.sum(Y * Y)) - float(np.sum(MtY * X))) / model.tau2
    val = max(val, 0.0)
    return (val, report) if return_report else val


def apply_QY(bundle, model, v, solver=None):
    """``Q_Y v = tau2^-1 (v - M_D A^-1 M_D^T v)``."""
    v = _check_obs(bundle, v)
    X = conditional_mean(bundle, model, v, solver)
    return (v - bundle.M_D @ X) / model.tau2


def logdet_QY(bundle, model, M=10, seed=0, probes=None, degree=DEFAULT_LOG_DEGREE,
              lam_max=None, kind="rademacher", counter=0, batch=512):
    """Hutchinson estimate of ``log|Q_Y|``.

    ``probes`` (an ``(n, M)`` block) overrides ``M``/``seed`` so repeated
    calls can share the same vectors.
    """
    n, p, tau2 = bundle.n, bundle.p, model.tau2
    if probes is None:
        probes = draw_probes(n, M, seed, counter, kind)
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 1:
        probes = probes[:, None]
    if probes.shape[0] != n:
        raise DimensionMismatch("probe block has wrong length")
    M = probes.shape[1]
    lam_max = eigen_upper_bound_S(bundle.S) if lam_max is None else lam_max
    interval_A = eigen_interval_A(model, bundle, lam_max)

    poly = model.poly
    s_int = _widen(0.0, lam_max)
    logP = chebyshev_fit(lambda x: np.log(poly(x)), s_int, degree, "log_P", n_check=0)
    a_int = _widen(interval_A.lo, interval_A.hi)
    logA = chebyshev_fit(np.log, a_int, degree, "log", n_check=0)

    q1 = hutchinson_samples(bundle.S, logP, probes, s_int, batch)
    A = kriging_operator(bundle, model)
    q2 = hutchinson_samples(A, logA, probes, a_int, batch)
    const = (n - p) * math.log(tau2) + 2.0 * float(np.sum(np.log(bundle.sqrtC)))
    samples = q1 - q2 + const
    value = float(np.sum(q1) - np.sum(q2)) / M + const
    return LogDetEstimate(value, M, seed, samples)


def log_likelihood(bundle, model, Y, M=10, seed=0, probes=None, degree=DEFAULT_LOG_DEGREE,
                   solver=None, lam_max=None, kind="rademacher", counter=0):
    Y = _check_obs(bundle, Y)
    ld = logdet_QY(bundle, model, M, seed, probes, degree, lam_max, kind, counter)
    quad = quadratic_form(bundle, model, Y, solver)
    return -0.5 * (bundle.p * math.log(2 * math.pi) - ld.value + quad)


def fit_regression(bundle, model, X, Ytilde, solver=None):
    """Generalised least squares ``beta = (X^T Q_Y X)^-1 X^T Q_Y Ytilde``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Yt = _check_obs(bundle, Ytilde)
    if X.shape[0] != bundle.p:
        raise DimensionMismatch("covariate rows must match observations")
    k = X.shape[1]
    if np.linalg.matrix_rank(X) < k:
        raise RankDeficient(f"covariate matrix has rank < {k}")
    QX = np.column_stack([apply_QY(bundle, model, X[:, j], solver) for j in range(k)])
    G = X.T @ QX
    rhs = QX.T @ Yt
    if np.linalg.cond(G) > 1e14:
        raise RankDeficient("covariates are numerically collinear under Q_Y")
    return np.linalg.solve(0.5 * (G + G.T), rhs)


# ---------------------------------------------------------------------------
# maximum likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Settings of the two-phase simplex search.

    ``init_p1``/``init_p2`` default to zeros, which with ``epsilon`` gives the
    near-constant start ``P = epsilon``.
    """

    p1_degree: int = 1
    p2_degree: int = 1
    restarts: int = 8
    phase_probes: tuple = (1, 10)
    epsilon: float = 1e-3
    tau2_start: float = 1.0
    init_p1: tuple | None = None
    init_p2: tuple | None = None
    perturbation: float = 0.5
    simplex_step: float = 0.5
    log_degree: int = DEFAULT_LOG_DEGREE
    maxiter: int | None = None
    xatol: float = 1e-4
    fatol: float = 1e-6
    seed: int = 0
    probe_kind: str = "rademacher"
    solver: SolverConfig = SolverConfig(tol=1e-8)
    covariates: np.ndarray | None = None


class _Objective:
    """Negative log-likelihood in theta with a fixed probe block."""

    def __init__(self, bundle, Y, cfg, probes, lam_max, trace):
        self.bundle, self.Y, self.cfg = bundle, Y, cfg
        self.probes, self.lam_max, self.trace = probes, lam_max, trace
        self.n1, self.n2 = cfg.p1_degree + 1, cfg.p2_degree + 1
        self.calls = 0

    def loglik(self, x):
        theta = ThetaVector.unpack(x, self.n1, self.n2)
        model = theta.model(self.cfg.epsilon)
        Y = self.Y
        if self.cfg.covariates is not None:
            beta = fit_regression(self.bundle, model, self.cfg.covariates, Y, self.cfg.solver)
            Y = Y - np.asarray(self.cfg.covariates).reshape(Y.size, -1) @ beta
        return log_likelihood(self.bundle, model, Y, probes=self.probes, degree=self.cfg.log_degree,
                              solver=self.cfg.solver, lam_max=self.lam_max)

    def __call__(self, x):
        self.calls += 1
        try:
            ll = self.loglik(x)
        except (GRFError, ValueError, FloatingPointError) as exc:
            log.debug("objective failed at %s: %s", x, exc)
            ll = -math.inf
        if not math.isfinite(ll):
            ll = -math.inf
        self.trace.append((np.array(x, dtype=float), ll))
        return -ll if math.isfinite(ll) else 1e300


def _initial_simplex(x0, step, log_step=1.0):
    k = x0.size
    sim = np.tile(x0, (k + 1, 1))
    for i in range(k):
        sim[i + 1, i] += log_step if i == k - 1 else step
    return sim


def _nelder_mead(obj, x0, cfg):
    opts = {"initial_simplex": _initial_simplex(x0, cfg.simplex_step),
            "xatol": cfg.xatol, "fatol": cfg.fatol, "adaptive": True}
    if cfg.maxiter is not None:
        opts["maxiter"] = cfg.maxiter
        opts["maxfev"] = 2 * cfg.maxiter
    res = minimize(obj, x0, method="Nelder-Mead", options=opts)
    return res.x, -float(res.fun)


def initial_guesses(cfg):
    n1, n2 = cfg.p1_degree + 1, cfg.p2_degree + 1
    p1 = np.zeros(n1) if cfg.init_p1 is None else np.asarray(cfg.init_p1, dtype=float)
    p2 = np.zeros(n2) if cfg.init_p2 is None else np.asarray(cfg.init_p2, dtype=float)
    base = ThetaVector(p1, p2, math.log(cfg.tau2_start)).pack()
    out = []
    for r in range(cfg.restarts):
        x = base.copy()
        if r > 0:
            rng = substream(cfg.seed, RESTARTS, r)
            x[:-1] += cfg.perturbation * rng.standard_normal(x.size - 1)
        out.append(x)
    return out


def fit_mle(bundle, Y, config: FitConfig | None = None):
    """Two-phase maximum likelihood over ``(P1, P2, log tau2)``.

    Each restart runs a simplex search with ``phase_probes[0]`` probe vectors
    fixed for the whole phase, then restarts from that optimum with
    ``phase_probes[1]`` fresh fixed vectors.  Phase-two probes are shared by
    all restarts so their log-likelihoods are comparable; the best one wins.
    """
    cfg = config or FitConfig()
    Y = _check_obs(bundle, Y)
    guesses = initial_guesses(cfg)
    if not guesses:
        raise AllRestartsFailed("no initial guess (restarts=0)")
    lam_max = eigen_upper_bound_S(bundle.S)
    n = bundle.n
    m1, m2 = cfg.phase_probes
    final_probes = draw_probes(n, m2, cfg.seed, 0, cfg.probe_kind)
    trace = []
    best = None
    evaluations = 0
    for r, x0 in enumerate(guesses):
        try:
            if m1:
                W1 = draw_probes(n, m1, cfg.seed, 1 + r, cfg.probe_kind)
                obj1 = _Objective(bundle, Y, cfg, W1, lam_max, trace)
                x1, _ = _nelder_mead(obj1, x0, cfg)
                evaluations += obj1.calls
            else:
                x1 = x0
            obj2 = _Objective(bundle, Y, cfg, final_probes, lam_max, trace)
            x2, _ = _nelder_mead(obj2, x1, cfg)
            evaluations += obj2.calls
            ll = obj2.loglik(x2)
        except (GRFError, ValueError) as exc:
            log.warning("restart %d failed: %s", r, exc)
            continue
        log.info("restart %d: loglik %.6f", r, ll)
        if math.isfinite(ll) and (best is None or ll > best[1]):
            best = (x2, ll)
    if best is None:
        raise AllRestartsFailed(f"all {len(guesses)} restarts failed")
    theta = ThetaVector.unpack(best[0], cfg.p1_degree + 1, cfg.p2_degree + 1)
    model = theta.model(cfg.epsilon)
    beta = None
    if cfg.covariates is not None:
        beta = fit_regression(bundle, model, cfg.covariates, Y, cfg.solver)
    return FitReport(theta, best[1], len(guesses), trace, beta, model, cfg.seed, m2, evaluations)


def refit_loglik(bundle, Y, report: FitReport, config: FitConfig | None = None):
    """Re-evaluate a fit's log-likelihood with its phase-two probes."""
    cfg = config or FitConfig()
    W = draw_probes(bundle.n, report.num_probes, report.probe_seed, 0, cfg.probe_kind)
    obj = _Objective(bundle, np.asarray(Y, dtype=float), cfg, W, eigen_upper_bound_S(bundle.S), [])
    return obj.loglik(report.theta_hat.pack())


__all__ = [
    "FitConfig",
    "FitReport",
    "LogDetEstimate",
    "ThetaVector",
    "apply_QY",
    "draw_probes",
    "fit_mle",
    "fit_regression",
    "hutchinson_samples",
    "log_likelihood",
    "logdet_QY",
    "quadratic_form",
    "refit_loglik",
]
