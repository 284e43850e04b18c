import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import k1

from helpers import small_bundle
from riemgrf.errors import TooLarge
from riemgrf.fem import build_bundle, bundle_from_matrices
from riemgrf.mesh import AnisotropyField, TriangulatedManifold, build_grid, rotation_2d
from riemgrf.oracle import (
    AliasWarning,
    CovarianceCurve,
    covariance_curve_fft,
    dense_conditional,
    dense_conditional_forms,
    dense_logdet_decomposition,
    dense_logdet_QY,
    dense_matrices,
    dense_model,
    effective_range,
    matern_covariance,
    matern_polynomial,
    matern_variance,
)
from riemgrf.spectral import SpectralModel, SpectralPolynomial, eigen_upper_bound_S


def test_identity_case():
    b = bundle_from_matrices(np.ones(4), sp.diags([0.0, 1.0, 2.0, 3.0]))
    D = dense_matrices(b, lambda lam: np.ones_like(lam))
    np.testing.assert_allclose(D.Sigma, np.eye(4), atol=1e-15)
    np.testing.assert_allclose(D.Q, np.eye(4), atol=1e-15)


def test_reference_triangle_inverse_pair():
    ref = TriangulatedManifold(np.array([[0.0, 0], [1, 0], [0, 1]]), np.array([[0, 1, 2]]))
    b = build_bundle(ref)
    D = dense_matrices(b, SpectralPolynomial([1.0, 1.0]))
    np.testing.assert_allclose(D.Sigma @ D.Q, np.eye(3), atol=1e-10)
    assert np.allclose(D.Sigma, D.Sigma.T) and np.linalg.eigvalsh(D.Sigma).min() > 0


def test_eigenvalues_inside_bound():
    b = small_bundle(7, 0.6, p=0)
    D = dense_model(b, SpectralModel(matern_polynomial(1.0, 2), 1.0))
    assert D.eigvals.min() >= -1e-10 and D.eigvals.max() <= eigen_upper_bound_S(b.S)
    np.testing.assert_allclose(D.Sigma @ D.Q, np.eye(b.n), atol=1e-8)


def test_cap():
    b = small_bundle(5, 1.0, p=0)
    with pytest.raises(TooLarge):
        dense_matrices(b, SpectralPolynomial([1.0]), cap=10)


def test_conditional_limits():
    b = small_bundle(5, 1.0, p=10, seed=1)
    m = SpectralModel(matern_polynomial(1.0, 2), 1e12)
    Y = np.random.default_rng(0).standard_normal(10)
    mean, cov = dense_conditional(b, m, Y)
    Sig = dense_model(b, m).Sigma
    assert np.abs(mean).max() < 1e-10
    np.testing.assert_allclose(cov, Sig, atol=1e-9 * np.abs(Sig).max())


def test_conditional_identity_design():
    n = 6
    b = bundle_from_matrices(np.ones(n), sp.csr_matrix((n, n)), M_D=sp.identity(n))
    m = SpectralModel.from_coefficients([1.0], 1.0)
    Y = np.arange(n, dtype=float)
    mean, cov = dense_conditional(b, m, Y)
    np.testing.assert_allclose(mean, Y / 2, atol=1e-15)
    np.testing.assert_allclose(cov, np.eye(n) / 2, atol=1e-15)


def test_closed_forms_agree_and_logdet_identity():
    for seed in range(3):
        b = small_bundle(7, 0.8, p=25, seed=seed)
        m = SpectralModel.from_coefficients([1, -0.75, -0.75, 1], 0.01 * (seed + 1))
        Y = np.random.default_rng(seed).standard_normal(25)
        dm, dc = dense_conditional_forms(b, m, Y).discrepancy()
        assert dm <= 1e-9 and dc <= 1e-9
        assert dense_logdet_decomposition(b, m) == pytest.approx(dense_logdet_QY(b, m), abs=1e-9)


def test_matern_closed_form():
    assert matern_covariance(0.0, 2.0, 1.3, 4.0) == 4.0
    h = np.linspace(0, 5, 11)
    np.testing.assert_allclose(matern_covariance(h, 1.7, 0.5, 2.0), 2 * np.exp(-1.7 * h), rtol=1e-12)
    assert matern_covariance(1 / 3, 3.0, 1.0, 1.0) == pytest.approx(0.6019, abs=1e-4)
    assert matern_covariance(1.0, 1.0, 1.0) == pytest.approx(k1(1.0), rel=1e-14)
    assert effective_range(1.0, 1.0) == pytest.approx(math.sqrt(8))


def test_fft_curve_matches_matern_nu1():
    P = matern_polynomial(1.0, 2)
    curve = covariance_curve_fft(P, 2)
    assert curve.sill == pytest.approx(matern_variance(1.0, 1.0, 2), rel=0.01)
    c = curve.normalized()
    keep = c.lags <= 10
    np.testing.assert_allclose(c.values[keep], matern_covariance(c.lags[keep], 1.0, 1.0), atol=0.02)
    assert np.all(c.values[0] >= c.values)


def test_fft_curve_scaling():
    P = SpectralPolynomial([1, -0.75, -0.75, 1])
    a = covariance_curve_fft(P, 2, omega_max=40.0)
    b = covariance_curve_fft(P.scaled(3.0), 2, omega_max=40.0)
    np.testing.assert_allclose(b.values, a.values / 3.0, rtol=1e-12, atol=1e-15)


def test_fft_curve_3d_exponential():
    kappa = 1.5
    c = covariance_curve_fft(matern_polynomial(kappa, 2), 3, max_lag=4.0, n_lags=41)
    assert c.sill == pytest.approx(matern_variance(kappa, 0.5, 3), rel=1e-6)
    np.testing.assert_allclose(c.normalized().values, np.exp(-kappa * c.lags), atol=1e-5)


def test_alias_warning():
    with pytest.warns(AliasWarning):
        covariance_curve_fft(matern_polynomial(1.0, 2), 2, grid=64, omega_max=2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        covariance_curve_fft(matern_polynomial(1.0, 2), 2, grid=512)


def test_curve_csv_roundtrip(tmp_path):
    c = covariance_curve_fft(matern_polynomial(1.0, 2), 2, grid=512)
    p = tmp_path / "c.csv"
    c.to_csv(p)
    d = CovarianceCurve.from_csv(p)
    assert d.values.tobytes() == c.values.tobytes() and d.lags.tobytes() == c.lags.tobytes()
    assert p.read_text().splitlines()[0] == "lag,value"


def _central_correlations(b, D, centre_xy, offsets):
    xy = b.mesh.vertices
    ic = int(np.argmin(np.linalg.norm(xy - centre_xy, axis=1)))
    out = []
    for off in offsets:
        j = int(np.argmin(np.linalg.norm(xy - (xy[ic] + off), axis=1)))
        out.append(D.Sigma[ic, j] / math.sqrt(D.Sigma[ic, ic] * D.Sigma[j, j]))
    return np.array(out)


def test_constant_anisotropy_correlation_is_mapped_isotropic():
    g = build_grid(2, (44, 44), 0.5)
    theta, rho = 0.5, (2.0, 1.0)
    f = AnisotropyField.constant_field(g.n, rho, theta)
    b = build_bundle(g, f)
    D = dense_model(b, SpectralModel(matern_polynomial(1.0, 2), 1.0), cap=3000)
    R = rotation_2d(theta)
    offsets = [np.array(o) for o in ((1, 0), (0, 1), (2, 1), (-1, 2), (3, -1), (1.5, 1.5), (0, 2.5))]
    corr = _central_correlations(b, D, np.array([11.0, 11.0]), offsets)
    # isotropic Matérn evaluated at the mapped lag |D^-1 R^-1 h|
    lags = [np.linalg.norm((R.T @ o) / np.array(rho)) for o in offsets]
    iso = matern_covariance(np.array(lags), 1.0, 1.0)
    assert np.abs(corr - iso).max() <= 0.05
