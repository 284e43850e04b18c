"""P1 finite element operators with mass lumping.

All element integrals are closed forms for piecewise-linear hat functions
under a piecewise-constant metric:

    (psi_i, 1)              = sum_e sqrt|g_e| vol_e / (d + 1)
    (grad psi_i, grad psi_j) = sum_e sqrt|g_e| vol_e  grad_i^T G_e^-1 grad_j

The scaled stiffness is ``S = sqrtC^-1 F sqrtC^-1`` with diagonal ``sqrtC``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NonFiniteEntry, NonPositiveMass
from .mesh import PointLocator, element_gradients, element_metrics

_CHUNK = 1 << 18


@dataclass(frozen=True, eq=False)
class LumpedMass:
    """Diagonal lumped mass ``(psi_i, 1)``; ``sqrt`` gives the entries of sqrtC."""

    diag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=float)
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise NonPositiveMass("lumped masses must be finite and strictly positive")
        d.setflags(write=False)
        object.__setattr__(self, "diag", d)
        s = np.sqrt(d)
        s.setflags(write=False)
        object.__setattr__(self, "sqrt", s)

    @property
    def n(self):
        return self.diag.shape[0]

    @property
    def total(self):
        return float(self.diag.sum())


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """Sparse operators needed by every matrix-free algorithm.

    ``M_D`` (p x n) interpolates vertex values at observation locations and
    ``M_T`` (q x n) at prediction targets; both may have zero rows.
    """

    mass: LumpedMass
    S: sp.csr_matrix
    M_D: sp.csr_matrix
    M_T: sp.csr_matrix
    mesh: object = None
    F: sp.csr_matrix | None = None

    @property
    def sqrtC(self):
        return self.mass.sqrt

    @property
    def n(self):
        return self.S.shape[0]

    @property
    def p(self):
        return self.M_D.shape[0]

    @property
    def q(self):
        return self.M_T.shape[0]

    def with_observations(self, locations, locator=None):
        return dataclasses.replace(self, M_D=assemble_design(self.mesh, locations, locator))

    def with_targets(self, locations, locator=None):
        return dataclasses.replace(self, M_T=assemble_design(self.mesh, locations, locator))

    def with_design(self, M_D=None, M_T=None):
        new = {}
        if M_D is not None:
            new["M_D"] = _as_design(M_D, self.n)
        if M_T is not None:
            new["M_T"] = _as_design(M_T, self.n)
        return dataclasses.replace(self, **new)


def _as_design(M, n):
    M = sp.csr_matrix(M)
    if M.shape[1] != n:
        raise DimensionMismatch(f"design matrix has {M.shape[1]} columns, expected {n}")
    return M


def empty_design(n):
    return sp.csr_matrix((0, n))


def _blocks(mesh):
    m = mesh.n_simplices
    for a in range(0, m, _CHUNK):
        yield a, min(a + _CHUNK, m)


def assemble_lumped_mass(mesh, field=None):
    d = mesh.dim
    diag = np.zeros(mesh.n)
    for a, b in _blocks(mesh):
        vol = mesh.volumes(a, b)
        _, _, sd = element_metrics(mesh, field, a, b)
        w = np.repeat(sd * vol / (d + 1), d + 1)
        diag += np.bincount(mesh.simplices[a:b].ravel(), weights=w, minlength=mesh.n)
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise NonPositiveMass("vertex with non-positive lumped mass (isolated vertex or bad metric)")
    return LumpedMass(diag)


def assemble_stiffness(mesh, field=None):
    n, k = mesh.n, mesh.dim + 1
    F = sp.csr_matrix((n, n))
    for a, b in _blocks(mesh):
        vol, grads = element_gradients(mesh, a, b)
        _, G_inv, sd = element_metrics(mesh, field, a, b)
        local = np.einsum("eid,edf,ejf->eij", grads, G_inv, grads) * (sd * vol)[:, None, None]
        simp = mesh.simplices[a:b]
        rows = np.repeat(simp, k, axis=1).ravel()
        cols = np.tile(simp, (1, k)).ravel()
        block = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        F = F + block
        del local, rows, cols, block
    F.sum_duplicates()
    F.sort_indices()
    if not np.all(np.isfinite(F.data)):
        raise NonFiniteEntry("stiffness matrix has non-finite entries")
    return F


def assemble_scaled_stiffness(mass, F):
    sq = mass.sqrt if isinstance(mass, LumpedMass) else np.sqrt(np.asarray(mass, dtype=float))
    if F.shape != (sq.size, sq.size):
        raise DimensionMismatch(f"stiffness {F.shape} vs {sq.size} masses")
    inv = sp.diags(1.0 / sq)
    S = (inv @ sp.csr_matrix(F) @ inv).tocsr()
    S.sort_indices()
    return S


def assemble_design(mesh, locations, locator=None):
    """Sparse interpolation matrix of barycentric weights, one row per location."""
    pts = np.asarray(locations, dtype=float)
    n, k = mesh.n, mesh.dim + 1
    if pts.size == 0:
        return empty_design(n)
    pts = np.atleast_2d(pts)
    loc = locator or PointLocator(mesh)
    elems, w = loc.locate(pts)
    rows = np.repeat(np.arange(len(pts)), k)
    cols = mesh.simplices[elems].ravel()
    M = sp.csr_matrix((w.ravel(), (rows, cols)), shape=(len(pts), n))
    M.eliminate_zeros()
    M.sort_indices()
    return M


def build_bundle(mesh, field=None, observations=None, targets=None, keep_stiffness=False):
    """Assemble lumped mass, scaled stiffness and design matrices in one go."""
    mass = assemble_lumped_mass(mesh, field)
    F = assemble_stiffness(mesh, field)
    S = assemble_scaled_stiffness(mass, F)
    locator = None
    if (observations is not None and len(observations)) or (targets is not None and len(targets)):
        locator = PointLocator(mesh)
    M_D = empty_design(mesh.n) if observations is None else assemble_design(mesh, observations, locator)
    M_T = empty_design(mesh.n) if targets is None else assemble_design(mesh, targets, locator)
    return OperatorBundle(mass, S, M_D, M_T, mesh=mesh, F=F if keep_stiffness else None)


def bundle_from_matrices(sqrtC, S, M_D=None, M_T=None):
    """Wrap explicit operators (toy problems, tests) into a bundle."""
    sq = np.asarray(sqrtC, dtype=float)
    S = sp.csr_matrix(S)
    n = S.shape[0]
    if sq.shape != (n,):
        raise DimensionMismatch("sqrtC must be a length-n vector")
    mass = LumpedMass(sq**2)
    M_D = empty_design(n) if M_D is None else _as_design(M_D, n)
    M_T = empty_design(n) if M_T is None else _as_design(M_T, n)
    return OperatorBundle(mass, S, M_D, M_T)
