"""Gaussian random fields on Riemannian manifolds via matrix-free FEM spectral methods."""

from .errors import GRFError
from .fem import OperatorBundle, build_bundle, bundle_from_matrices
from .fieldops import (
    PriorSampler,
    conditional_mean,
    conditional_simulate,
    krige,
    simulate_observations,
    simulate_prior,
)
from .likelihood import FitConfig, fit_mle, log_likelihood, logdet_QY, quadratic_form
from .mesh import AnisotropyField, TriangulatedManifold, build_grid, icosphere, load_mesh
from .spectral import PositivePolynomialParam, SpectralModel, SpectralPolynomial

__version__ = "0.1.0"

__all__ = [
    "AnisotropyField",
    "FitConfig",
    "GRFError",
    "OperatorBundle",
    "PositivePolynomialParam",
    "PriorSampler",
    "SpectralModel",
    "SpectralPolynomial",
    "TriangulatedManifold",
    "build_bundle",
    "build_grid",
    "bundle_from_matrices",
    "conditional_mean",
    "conditional_simulate",
    "fit_mle",
    "icosphere",
    "krige",
    "load_mesh",
    "log_likelihood",
    "logdet_QY",
    "quadratic_form",
    "simulate_observations",
    "simulate_prior",
]
