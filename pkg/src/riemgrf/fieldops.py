"""Unconditional simulation, kriging and conditional simulation.

The latent weights have precision ``Q = sqrtC P(S) sqrtC``.  Kriging solves

    (tau2 Q + M_D^T M_D) X = M_D^T Y

by conjugate gradient using only sparse products; prior samples use the
square root ``sqrtC^-1 (1/sqrt P)(S)`` of the covariance through a Chebyshev
expansion.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NonPositiveLowerBound, SolverError
from .solver import SolverConfig, conjugate_gradient
from .spectral import (
    SpectralModel,
    apply_chebyshev,
    apply_poly_shifted,
    chebyshev_fit,
    chebyshev_fit_adaptive,
    eigen_upper_bound_S,
    poly_extrema,
)

__all__ = [
    "ObservationSet",
    "PriorSampler",
    "SpectralModel",
    "conditional_mean",
    "conditional_simulate",
    "krige",
    "kriging_operator",
    "simulate_observations",
    "simulate_prior",
    "standardize",
    "substream",
]

# substream purposes
PRIOR, NOISE, PROBES, RESTARTS = 0, 1, 2, 3


def substream(seed, purpose, counter=0):
    """Independent generator for one purpose of a root seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(counter)))
    return np.random.default_rng(ss)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    locations: np.ndarray
    values: np.ndarray
    M_D: sp.csr_matrix

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if self.M_D.shape[0] != vals.shape[0] or len(self.locations) != vals.shape[0]:
            raise DimensionMismatch("locations, values and design rows must match")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_mesh(cls, mesh, locations, values, locator=None):
        from .fem import assemble_design

        return cls(np.asarray(locations, dtype=float), values, assemble_design(mesh, locations, locator))


def standardize(model: SpectralModel, variance: float) -> SpectralModel:
    """Rescale ``P`` so that a field of marginal ``variance`` becomes unit variance."""
    return dataclasses.replace(model, poly=model.poly.scaled(variance), param=None)


class PriorSampler:
    """Chebyshev approximation of ``1/sqrt(P)`` on ``[0, lambda_max(S)]`` for one bundle.

    Reusable across draws; ``approx.degree`` reports the degree in use.
    """

    def __init__(self, bundle, model, degree=None, max_degree=1024, tail_tol=1e-8):
        self.bundle = bundle
        self.model = model
        self.lam_max = eigen_upper_bound_S(bundle.S)
        inf_p, _ = poly_extrema(model.poly, 0.0, self.lam_max)
        if inf_p <= 0:
            raise NonPositiveLowerBound("P must be positive on the spectrum of S")
        poly = model.poly
        target = lambda lam: 1.0 / np.sqrt(poly(lam))  # noqa: E731
        if degree is None:
            self.approx = chebyshev_fit_adaptive(
                target, (0.0, self.lam_max), start=16, max_degree=max_degree,
                tail_tol=tail_tol, target_id="inv_sqrt_P", n_check=10_000,
            )
        else:
            self.approx = chebyshev_fit(target, (0.0, self.lam_max), degree, "inv_sqrt_P", 10_000)

    @property
    def degree(self):
        return self.approx.degree

    def transform(self, W):
        """Map standard normal ``W`` (vector or ``(n, k)`` block) to prior draws."""
        W = np.asarray(W, dtype=float)
        if W.shape[0] != self.bundle.n:
            raise DimensionMismatch("white noise has wrong length")
        y = apply_chebyshev(self.bundle.S, self.approx, W, spectrum=(0.0, self.lam_max))
        inv = 1.0 / self.bundle.sqrtC
        return (inv if y.ndim == 1 else inv[:, None]) * y

    def sample(self, seed, counter=0, size=None):
        rng = substream(seed, PRIOR, counter)
        shape = (self.bundle.n,) if size is None else (self.bundle.n, size)
        return self.transform(rng.standard_normal(shape))


def simulate_prior(bundle, model, seed, sampler=None, counter=0):
    """One draw of the latent weights ``Z'`` with covariance ``sqrtC^-1 P(S)^-1 sqrtC^-1``."""
    sampler = sampler or PriorSampler(bundle, model)
    return sampler.sample(seed, counter)


def simulate_observations(Z, M_D, tau2, seed, counter=0):
    """``Y' = M_D Z + tau eps`` with fresh standard normal ``eps``."""
    Z = np.asarray(Z, dtype=float)
    if M_D.shape[0] == 0:
        return np.zeros(0)
    if M_D.shape[1] != Z.shape[0]:
        raise DimensionMismatch("design matrix and field length differ")
    Y = M_D @ Z
    if tau2 > 0:
        Y = Y + np.sqrt(tau2) * substream(seed, NOISE, counter).standard_normal(Y.shape)
    return Y


def kriging_operator(bundle, model):
    """Routine ``v -> (tau2 Q + M_D^T M_D) v``."""
    tau2, poly, M = model.tau2, model.poly, bundle.M_D
    return lambda v: apply_poly_shifted(bundle, tau2, poly, M, v)


def conditional_mean(bundle, model, Y, solver=None, return_report=False, x0=None):
    """Conditional expectation of the vertex weights given observations ``Y``."""
    solver = solver or SolverConfig()
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (bundle.p,):
        raise DimensionMismatch(f"{Y.shape[0]} observations for {bundle.p} design rows")
    rhs = bundle.M_D.T @ Y if bundle.p else np.zeros(bundle.n)
    x, report = conjugate_gradient(
        kriging_operator(bundle, model), rhs, tol=solver.tol, maxit=solver.maxit, x0=x0
    )
    if not report.converged and solver.raise_on_failure:
        raise SolverError(
            f"CG did not converge in {report.iterations} iterations "
            f"(relative residual {report.final_relative_residual:.2e})"
        )
    return (x, report) if return_report else x


def krige(bundle, model, Y, targets=None, solver=None, return_report=False):
    """Kriging predictors ``M_T E[Z | Y]``.

    ``targets`` are coordinates (a target design matrix is assembled) or
    ``None`` to use ``bundle.M_T``.
    """
    if targets is not None:
        bundle = bundle.with_targets(targets)
    X, report = conditional_mean(bundle, model, Y, solver, return_report=True)
    Z = bundle.M_T @ X
    return (Z, report) if return_report else Z


def conditional_simulate(bundle, model, Y, seed, solver=None, sampler=None, counter=0,
                         return_report=False):
    """Draw from ``Z | Y`` as ``E[Z|Y] + Z' - E[Z'|Y']``.

    ``(Z', Y')`` is a fresh prior draw with its own noisy observations.  By
    linearity of the conditional mean a single solve with right-hand side
    ``M_D^T (Y - Y')`` is enough.
    """
    sampler = sampler or PriorSampler(bundle, model)
    Zp = sampler.sample(seed, counter)
    Yp = simulate_observations(Zp, bundle.M_D, model.tau2, seed, counter)
    X, report = conditional_mean(bundle, model, np.asarray(Y, dtype=float) - Yp, solver,
                                 return_report=True)
    out = Zp + X
    return (out, report) if return_report else out
