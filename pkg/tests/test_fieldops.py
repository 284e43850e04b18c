import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import small_bundle
from riemgrf.errors import DimensionMismatch, SolverError
from riemgrf.fem import build_bundle, bundle_from_matrices
from riemgrf.fieldops import (
    ObservationSet,
    PriorSampler,
    conditional_mean,
    conditional_simulate,
    krige,
    simulate_observations,
    simulate_prior,
    standardize,
    substream,
)
from riemgrf.mesh import AnisotropyField, build_grid
from riemgrf.oracle import dense_conditional, dense_model, matern_polynomial, matern_variance
from riemgrf.solver import SolverConfig
from riemgrf.spectral import SpectralModel

MATERN = SpectralModel(matern_polynomial(1.0, 2), 0.01)


def test_identity_density_gives_white_noise():
    b = bundle_from_matrices(np.ones(6), sp.identity(6) * 0.5)
    m = SpectralModel.from_coefficients([1.0], 1.0)
    Z = simulate_prior(b, m, seed=3)
    W = substream(3, 0, 0).standard_normal(6)
    np.testing.assert_array_equal(Z, W)


def test_prior_covariance_monte_carlo():
    b = small_bundle(4, 1.0, p=0)
    m = SpectralModel(matern_polynomial(0.8, 2), 0.1)
    Sig = dense_model(b, m).Sigma
    Z = PriorSampler(b, m).sample(11, size=5000)
    C = np.cov(Z)
    # Monte-Carlo standard error of a covariance entry: sqrt((s_ii s_jj + s_ij^2) / N)
    se = np.sqrt((np.outer(np.diag(Sig), np.diag(Sig)) + Sig**2) / 5000)
    assert np.abs(C - Sig).max() <= 5 * se.max()


def test_prior_variance_matches_matern():
    kappa = 1.0
    b = build_bundle(build_grid(2, (80, 80), 0.25))
    m = SpectralModel(matern_polynomial(kappa, 2), 1.0)
    Z = PriorSampler(b, m).sample(5, size=400)
    xy = b.mesh.vertices
    interior = np.all((xy > 5) & (xy < 15), axis=1)
    emp = Z[interior].var()
    assert emp == pytest.approx(matern_variance(kappa, 1.0, 2), rel=0.10)


def test_chebyshev_degree_reported():
    b = small_bundle(6, 1.0, p=0)
    s = PriorSampler(b, MATERN)
    assert 16 <= s.degree <= 1024
    assert PriorSampler(b, MATERN, degree=40).degree == 40


def test_simulate_observations_examples():
    b = small_bundle(3, 1.0, p=5)
    Z = np.arange(b.n, dtype=float)
    np.testing.assert_array_equal(simulate_observations(Z, b.M_D, 0.0, 1), b.M_D @ Z)
    assert simulate_observations(Z, sp.csr_matrix((0, b.n)), 0.01, 1).shape == (0,)
    g = build_grid(2, (3, 3))
    bb = build_bundle(g, observations=g.vertices)
    Zs = np.zeros(g.n)
    res = np.concatenate([simulate_observations(Zs, bb.M_D, 0.01, 7, counter=c) for c in range(500)])
    assert res.var() == pytest.approx(0.01, rel=0.05)
    with pytest.raises(DimensionMismatch):
        simulate_observations(Z[:-1], b.M_D, 0.1, 0)


def test_conditional_mean_examples():
    b = small_bundle(6, 1.0, p=30, seed=2)
    assert not conditional_mean(b, MATERN, np.zeros(30)).any()
    g = build_grid(2, (4, 4))
    full = build_bundle(g, observations=g.vertices)
    Y = np.random.default_rng(0).standard_normal(g.n)
    m = SpectralModel(matern_polynomial(1.0, 2), 1e-12)
    X = conditional_mean(full, m, Y, SolverConfig(tol=1e-12, maxit=5000))
    np.testing.assert_allclose(X, Y, rtol=1e-4, atol=1e-4 * np.abs(Y).max())
    with pytest.raises(DimensionMismatch):
        conditional_mean(b, MATERN, np.zeros(3))


def test_conditional_mean_matches_dense(rng):
    b = small_bundle(8, 1.0, p=40, seed=4)
    Y = rng.standard_normal(40)
    X = conditional_mean(b, MATERN, Y, SolverConfig(tol=1e-12))
    mean, _ = dense_conditional(b, MATERN, Y)
    assert np.linalg.norm(X - mean) <= 1e-8 * np.linalg.norm(mean)


LINEAR_BUNDLE = small_bundle(8, 1.0, p=40, seed=4)


@settings(max_examples=20)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-5, 5), c=st.floats(-5, 5))
def test_conditional_mean_is_linear(seed, a, c):
    b = LINEAR_BUNDLE
    Y1, Y2 = np.random.default_rng(seed).standard_normal((2, b.p))
    cfg = SolverConfig(tol=1e-13)
    X1 = conditional_mean(b, MATERN, Y1, cfg)
    X2 = conditional_mean(b, MATERN, Y2, cfg)
    X3 = conditional_mean(b, MATERN, a * Y1 + c * Y2, cfg)
    scale = abs(a) * np.linalg.norm(X1) + abs(c) * np.linalg.norm(X2)
    assert np.linalg.norm(X3 - (a * X1 + c * X2)) <= 1e-9 * max(scale, 1e-300)


def test_solver_failure_raises():
    b = small_bundle(8, 1.0, p=40, seed=4)
    with pytest.raises(SolverError):
        conditional_mean(b, MATERN, np.ones(40), SolverConfig(tol=1e-14, maxit=2))
    X, rep = conditional_mean(b, MATERN, np.ones(40), SolverConfig(tol=1e-14, maxit=2, raise_on_failure=False),
                              return_report=True)
    assert not rep.converged


def test_krige_examples():
    g = build_grid(2, (6, 6))
    obs = g.vertices[[3, 10, 20, 30]]
    b = build_bundle(g, observations=obs)
    Y = np.array([1.0, -2.0, 0.5, 3.0])
    tiny = SpectralModel(matern_polynomial(1.0, 2), 1e-10)
    pred = krige(b, tiny, Y, targets=obs, solver=SolverConfig(tol=1e-13, maxit=5000))
    np.testing.assert_allclose(pred, Y, rtol=1e-6)
    allv = krige(b, MATERN, Y, targets=g.vertices)
    np.testing.assert_allclose(allv, conditional_mean(b, MATERN, Y), rtol=1e-12, atol=1e-14)
    # the dense conditional mean through M_T
    bt = b.with_targets(np.array([[2.5, 2.5], [0.1, 5.9]]))
    mean, _ = dense_conditional(bt, MATERN, Y)
    ref = bt.M_T @ mean
    np.testing.assert_allclose(krige(bt, MATERN, Y, solver=SolverConfig(tol=1e-12)), ref, rtol=1e-8)


@settings(max_examples=20)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(1, 40))
def test_krige_permutation_invariant(seed, p):
    rng = np.random.default_rng(seed)
    g = build_grid(2, (8, 8))
    pts = rng.random((p, 2)) * 8
    Y = rng.standard_normal(p)
    perm = rng.permutation(p)
    cfg = SolverConfig(tol=1e-13)
    a = krige(build_bundle(g, observations=pts), MATERN, Y, targets=g.vertices, solver=cfg)
    b = krige(build_bundle(g, observations=pts[perm]), MATERN, Y[perm], targets=g.vertices, solver=cfg)
    assert np.abs(a - b).max() <= 1e-12 * max(np.abs(a).max(), 1e-300)


def test_conditional_simulation_limits_and_determinism():
    g = build_grid(2, (4, 4))
    full = build_bundle(g, observations=g.vertices)
    Y = np.random.default_rng(1).standard_normal(g.n)
    m = SpectralModel(matern_polynomial(1.0, 2), 1e-10)
    out = conditional_simulate(full, m, Y, seed=4, solver=SolverConfig(tol=1e-13, maxit=5000))
    np.testing.assert_allclose(out, Y, atol=1e-3)
    b = small_bundle(5, 1.0, p=8)
    Yb = np.ones(8)
    a1 = conditional_simulate(b, MATERN, Yb, seed=9)
    a2 = conditional_simulate(b, MATERN, Yb, seed=9)
    assert a1.tobytes() == a2.tobytes()
    assert not np.array_equal(a1, conditional_simulate(b, MATERN, Yb, seed=10))


def test_conditioning_contracts_variance():
    b = small_bundle(8, 1.0, p=30, seed=6)
    Y = np.zeros(30)
    mean, cov = dense_conditional(b, MATERN, Y)
    Sig = dense_model(b, MATERN).Sigma
    assert np.all(np.diag(cov) <= np.diag(Sig) + 1e-12)


def test_anisotropic_range_ratio():
    # ranges (2, 1) along the axes: correlation decays twice slower in x than in y
    g = build_grid(2, (30, 30), 0.5)
    f = AnisotropyField.constant_field(g.n, (2.0, 1.0), 0.0)
    b = build_bundle(g, f)
    m = SpectralModel(matern_polynomial(1.0, 2), 1.0)
    Z = PriorSampler(b, m).sample(21, size=200)
    N = 31
    ix = lambda i, j: j * N + i  # noqa: E731
    centre = [ix(i, j) for i in range(12, 19) for j in range(12, 19)]
    def corr(di, dj):
        other = [c + di + dj * N for c in centre]
        return np.mean([np.corrcoef(Z[a], Z[o])[0, 1] for a, o in zip(centre, other)])
    # lag 2 in x should roughly match lag 1 in y
    assert abs(corr(4, 0) - corr(0, 2)) < 0.1
    assert corr(2, 0) > corr(0, 2) + 0.1


def test_observation_set_and_standardize():
    g = build_grid(2, (2, 2))
    obs = ObservationSet.from_mesh(g, [[0.5, 0.5], [1.5, 1.0]], [1.0, 2.0])
    assert obs.M_D.shape == (2, 9)
    with pytest.raises(DimensionMismatch):
        ObservationSet(np.zeros((2, 2)), [1.0], obs.M_D)
    m = standardize(MATERN, 4.0)
    np.testing.assert_allclose(m.poly.coeffs, 4 * MATERN.poly.coeffs)
