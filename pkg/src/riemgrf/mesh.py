"""Triangulated manifolds, point location and the anisotropy metric.

A mesh is either flat (intrinsic dimension equal to the ambient one, 2 or 3)
or a triangulated surface embedded in 3D.  On flat meshes a spatially
varying anisotropy field ``(ranges, rotation)`` defines the Riemannian metric

    g_p(u, v) = (D^-1 R^-1 u) . (D^-1 R^-1 v),     G = R D^-2 R^T,

which is evaluated once per element from vertex-averaged parameters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSimplex,
    GridTooLarge,
    IndexOutOfRange,
    MissingField,
    OutsideDomain,
    ParseError,
)

DEFAULT_VERTEX_CAP = 50_000_000
_CHUNK = 1 << 18


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangulatedManifold:
    """Vertices plus simplices of one intrinsic dimension.

    ``vertices`` has shape ``(n, ambient_dim)``; ``simplices`` has shape
    ``(m, d + 1)``.  Construction validates indices and rejects simplices
    with vanishing volume.  Arrays are made read-only.
    """

    vertices: np.ndarray
    simplices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        s = np.asarray(self.simplices)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise ParseError(f"vertices must be (n, 2) or (n, 3), got {v.shape}")
        if s.ndim != 2 or s.shape[1] not in (3, 4):
            raise ParseError(f"simplices must have 3 or 4 columns, got {s.shape}")
        if s.size and not np.issubdtype(s.dtype, np.integer):
            if not np.all(np.equal(np.mod(s, 1), 0)):
                raise ParseError("simplex indices must be integers")
        s = s.astype(np.int64)
        if s.shape[1] - 1 > v.shape[1]:
            raise ParseError("tetrahedra require 3D vertex coordinates")
        if not np.all(np.isfinite(v)):
            raise ParseError("non-finite vertex coordinates")
        if s.size and (s.min() < 0 or s.max() >= v.shape[0]):
            bad = int(np.nonzero((s < 0).any(1) | (s >= v.shape[0]).any(1))[0][0])
            raise IndexOutOfRange(f"simplex {bad} references a vertex outside [0, {v.shape[0]})")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "simplices", _frozen(s))
        thresh = 1e-13 * (self.diameter or 1.0) ** self.dim
        for a in range(0, self.n_simplices, _CHUNK):
            bad = np.nonzero(~(self.volumes(a, a + _CHUNK) > thresh))[0]
            if bad.size:
                raise DegenerateSimplex(f"simplex {a + int(bad[0])} has zero volume")

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_simplices(self) -> int:
        return self.simplices.shape[0]

    @property
    def dim(self) -> int:
        """Intrinsic dimension d."""
        return self.simplices.shape[1] - 1

    @property
    def ambient_dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def is_surface(self) -> bool:
        return self.dim < self.ambient_dim

    @property
    def diameter(self) -> float:
        """Length of the bounding-box diagonal."""
        if self.n == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def volumes(self, start=0, stop=None) -> np.ndarray:
        """Euclidean d-volumes of simplices ``start:stop``."""
        T = _edge_frames(self, start, stop)
        return np.abs(np.linalg.det(T)) / math.factorial(self.dim)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as a sorted ``(E, 2)`` array."""
        k = self.dim + 1
        pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
        e = np.concatenate([self.simplices[:, [a, b]] for a, b in pairs])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        if self.dim != 2:
            raise ValueError("Euler characteristic only implemented for triangle meshes")
        return self.n - len(self.edges()) + self.n_simplices


def _edge_frames(mesh, start=0, stop=None):
    """Per-element edge matrices in a local chart, shape (m, d, d).

    Rows are ``x_k - x_0`` for k = 1..d.  Surface triangles are expressed in
    an orthonormal tangent frame (e1 along the first edge).
    """
    simp = mesh.simplices[start:stop]
    X = mesh.vertices
    x0 = X[simp[:, 0]]
    E = X[simp[:, 1:]] - x0[:, None, :]
    if not mesh.is_surface:
        return E
    a, b = E[:, 0], E[:, 1]
    la = np.linalg.norm(a, axis=1)
    e1 = a / np.where(la > 0, la, 1.0)[:, None]
    nrm = np.cross(a, b)
    ln = np.linalg.norm(nrm, axis=1)
    nhat = nrm / np.where(ln > 0, ln, 1.0)[:, None]
    e2 = np.cross(nhat, e1)
    local = np.empty((len(simp), 2, 2))
    local[:, 0, 0] = la
    local[:, 0, 1] = 0.0
    local[:, 1, 0] = np.einsum("ij,ij->i", b, e1)
    local[:, 1, 1] = np.einsum("ij,ij->i", b, e2)
    return local


def element_gradients(mesh, start=0, stop=None):
    """Volumes and barycentric-coordinate gradients of simplices.

    Returns ``(vol, grads)`` with ``grads[e, k]`` the (chart) gradient of the
    k-th hat function restricted to element ``e``.
    """
    T = _edge_frames(mesh, start, stop)
    d = T.shape[-1]
    vol = np.abs(np.linalg.det(T)) / math.factorial(d)
    Tinv = np.linalg.inv(T)
    grads = np.empty((T.shape[0], d + 1, d))
    grads[:, 1:, :] = np.transpose(Tinv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return vol, grads


# ---------------------------------------------------------------------------
# construction and I/O
# ---------------------------------------------------------------------------


def build_grid(d, cells, sizes=1.0, origin=None, max_vertices=DEFAULT_VERTEX_CAP):
    """Structured simplicial mesh of a box.

    Each cell is split into 2 triangles (d=2, along the (0,0)-(1,1) diagonal)
    or into the 6 Kuhn tetrahedra sharing the main diagonal (d=3).  Vertices
    are numbered with the x index running fastest.
    """
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    cells = np.broadcast_to(np.asarray(cells, dtype=np.int64), (d,)).copy()
    sizes = np.broadcast_to(np.asarray(sizes, dtype=float), (d,)).copy()
    if np.any(cells < 1):
        raise ValueError("need at least one cell per axis")
    if np.any(sizes <= 0):
        raise ValueError("cell sizes must be positive")
    origin = np.zeros(d) if origin is None else np.asarray(origin, dtype=float)
    nv = cells + 1
    total = int(np.prod(nv))
    if total > max_vertices:
        raise GridTooLarge(f"grid would have {total} vertices (cap {max_vertices})")

    axes = [origin[k] + sizes[k] * np.arange(nv[k]) for k in range(d)]
    mg = np.meshgrid(*axes, indexing="ij")
    # x fastest: flatten in Fortran order over (i, j[, k])
    verts = np.stack([g.ravel(order="F") for g in mg], axis=1)

    strides = np.cumprod(np.concatenate([[1], nv[:-1]]))
    idx = np.meshgrid(*[np.arange(c) for c in cells], indexing="ij")
    base = sum(idx[k].ravel(order="F") * strides[k] for k in range(d))
    if d == 2:
        sx, sy = strides
        v00, v10, v01, v11 = base, base + sx, base + sy, base + sx + sy
        tri = np.stack(
            [np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)], axis=1
        ).reshape(-1, 3)
        return TriangulatedManifold(verts, tri)
    tets = []
    for perm in permutations(range(3)):
        a = base
        b = a + strides[perm[0]]
        c = b + strides[perm[1]]
        e = c + strides[perm[2]]
        tets.append(np.stack([a, b, c, e], 1))
    tet = np.stack(tets, axis=1).reshape(-1, 4)
    return TriangulatedManifold(verts, tet)


def icosphere(subdivisions=1, radius=1.0):
    """Icosahedron refined by edge midpoint subdivision, projected to a sphere."""
    t = (1.0 + 5**0.5) / 2
    v = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangulatedManifold(radius * np.array(verts), np.array(faces))


def _off_tokens(path):
    toks = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0]
            toks.extend(line.split())
    return toks


def load_mesh(path, format="off", simplices_path=None):
    """Read a mesh from disk.

    ``format="off"`` reads an ASCII OFF file (faces must be triangles); a file
    whose z coordinates are all zero is treated as a flat 2D mesh.
    ``format="csv"`` reads a CSV pair: ``path`` holds vertex coordinates and
    ``simplices_path`` 0-based simplex indices, both with a header row.  If
    ``simplices_path`` is omitted it is derived from ``path`` by replacing a
    ``vertices`` stem with ``simplices``.
    """
    fmt = format.lower().replace("-", "_")
    path = Path(path)
    if not path.exists():
        raise ParseError(f"mesh file not found: {path}")
    if fmt == "off":
        return _load_off(path)
    if fmt in ("csv", "csv_pair"):
        if simplices_path is None:
            simplices_path = path.with_name(path.name.replace("vertices", "simplices"))
            if simplices_path == path:
                raise ParseError("cannot derive simplex file name; pass simplices_path")
        return _load_csv_pair(path, Path(simplices_path))
    raise ParseError(f"unknown mesh format {format!r}")


def _load_off(path):
    toks = _off_tokens(path)
    if not toks:
        raise ParseError(f"{path}: empty file")
    head = toks[0]
    pos = 1
    if head != "OFF":
        if head.startswith("OFF") and len(head) > 3:
            toks = [head[3:]] + toks[1:]
            pos = 0
        else:
            raise ParseError(f"{path}: missing OFF header")
    try:
        nv, nf = int(toks[pos]), int(toks[pos + 1])
        pos += 3
        coords = np.array(toks[pos:pos + 3 * nv], dtype=float)
        if coords.size != 3 * nv:
            raise ParseError(f"{path}: truncated vertex block")
        verts = coords.reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            k = int(toks[pos])
            if k != 3:
                raise ParseError(f"{path}: only triangular faces are supported")
            faces.append([int(t) for t in toks[pos + 1:pos + 4]])
            pos += 1 + k
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if nv and np.all(verts[:, 2] == 0.0):
        verts = verts[:, :2]
    return TriangulatedManifold(verts, faces)


def _read_csv_matrix(path, dtype):
    if not path.exists():
        raise ParseError(f"file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file (header required)")
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    try:
        arr = np.array([[dtype(c) for c in r] for r in body])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if arr.ndim != 2 and body:
        raise ParseError(f"{path}: ragged rows")
    return rows[0], arr.reshape(len(body), len(rows[0]))


def _load_csv_pair(vpath, spath):
    _, verts = _read_csv_matrix(vpath, float)
    _, simp = _read_csv_matrix(spath, int)
    return TriangulatedManifold(verts, simp)


def write_off(mesh, path):
    X = mesh.vertices
    if X.shape[1] == 2:
        X = np.column_stack([X, np.zeros(len(X))])
    with open(path, "w") as fh:
        fh.write(f"OFF\n{mesh.n} {mesh.n_simplices} 0\n")
        for p in X:
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        for s in mesh.simplices:
            fh.write("3 " + " ".join(str(int(i)) for i in s) + "\n")


def write_csv_pair(mesh, vertices_path, simplices_path):
    names = ["x", "y", "z"][: mesh.ambient_dim]
    with open(vertices_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows([[repr(float(c)) for c in p] for p in mesh.vertices])
    with open(simplices_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"v{k}" for k in range(mesh.dim + 1)])
        w.writerows(mesh.simplices.tolist())


# ---------------------------------------------------------------------------
# point location
# ---------------------------------------------------------------------------


class PointLocator:
    """Uniform hash grid over element bounding boxes.

    Flat meshes: a point is assigned to the candidate simplex maximising its
    smallest barycentric coordinate; points outside every simplex are
    accepted only within ``snap`` (default 1e-9 x diameter) of the mesh.
    Surfaces: points are projected onto the nearest triangle.
    """

    def __init__(self, mesh, snap=None):
        self.mesh = mesh
        self.snap = 1e-9 * mesh.diameter if snap is None else float(snap)
        X = mesh.vertices
        m = mesh.n_simplices
        lo = np.empty((m, mesh.ambient_dim))
        hi = np.empty((m, mesh.ambient_dim))
        for a in range(0, m, _CHUNK):
            P = X[mesh.simplices[a:a + _CHUNK]]
            lo[a:a + _CHUNK] = P.min(1)
            hi[a:a + _CHUNK] = P.max(1)
        ext = hi - lo
        if mesh.is_surface:
            self.margin = float(ext.max()) if m else 0.0
            lo -= self.margin
            hi += self.margin
        else:
            self.margin = 0.0
        self.origin = X.min(0) - 1e-12 * (mesh.diameter + 1.0)
        span = X.max(0) + 1e-12 * (mesh.diameter + 1.0) - self.origin
        if mesh.is_surface:
            self.origin = self.origin - self.margin
            span = span + 2 * self.margin
        mean_ext = ext.mean(0) if m else np.ones(mesh.ambient_dim)
        cell = np.maximum(mean_ext, 1e-3 * mean_ext.max() + 1e-300)
        if mesh.is_surface:
            cell = np.maximum(cell, self.margin)
        shape = np.maximum(np.ceil(span / cell), 1).astype(np.int64)
        while np.prod(shape) > 4 * max(m, 1):
            k = int(np.argmax(shape))
            shape[k] = max(shape[k] // 2, 1)
        self.shape = shape
        self.cell = span / shape

        clo = self._cell_index(lo)
        chi = self._cell_index(hi)
        spans = chi - clo + 1
        count = np.prod(spans, axis=1)
        elem = np.repeat(np.arange(m), count)
        offs = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
        key = np.zeros_like(offs)
        stride = 1
        rem = offs
        sp = np.repeat(spans, count, axis=0)
        base = np.repeat(clo, count, axis=0)
        for k in range(mesh.ambient_dim):
            ik = base[:, k] + rem % sp[:, k]
            rem = rem // sp[:, k]
            key = key + ik * stride
            stride *= shape[k]
        order = np.argsort(key, kind="stable")
        self._cell_elems = elem[order]
        self._starts = np.searchsorted(key[order], np.arange(np.prod(shape) + 1))

        self._x0 = X[mesh.simplices[:, 0]]
        if not mesh.is_surface:
            self._Tinv = np.linalg.inv(X[mesh.simplices[:, 1:]] - self._x0[:, None, :])

    def _cell_index(self, pts):
        c = np.floor((pts - self.origin) / self.cell).astype(np.int64)
        return np.clip(c, 0, self.shape - 1)

    def _cell_key(self, pts):
        c = self._cell_index(pts)
        stride = np.cumprod(np.concatenate([[1], self.shape[:-1]]))
        return c @ stride

    def _bary(self, elems, pts):
        if self.mesh.is_surface:
            return _closest_on_triangles(self.mesh.vertices[self.mesh.simplices[elems]], pts)
        lam = np.einsum("eji,ej->ei", self._Tinv[elems], pts - self._x0[elems])
        w = np.column_stack([1.0 - lam.sum(1), lam])
        return w

    def locate(self, points):
        """Locate many points; returns ``(elements, weights)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.mesh.ambient_dim:
            raise OutsideDomain(
                f"points have dimension {pts.shape[1]}, mesh is {self.mesh.ambient_dim}D"
            )
        np_ = len(pts)
        d1 = self.mesh.dim + 1
        elems = np.full(np_, -1, dtype=np.int64)
        weights = np.zeros((np_, d1))
        for a in range(0, np_, 1 << 15):
            sl = slice(a, min(a + (1 << 15), np_))
            e, w = self._locate_chunk(pts[sl], a)
            elems[sl] = e
            weights[sl] = w
        return elems, weights

    def _locate_chunk(self, pts, offset):
        n = len(pts)
        key = self._cell_key(pts)
        s0, s1 = self._starts[key], self._starts[key + 1]
        cnt = s1 - s0
        pid = np.repeat(np.arange(n), cnt)
        pos = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt) + np.repeat(s0, cnt)
        cand = self._cell_elems[pos]
        best_e = np.full(n, -1, dtype=np.int64)
        best_w = np.zeros((n, self.mesh.dim + 1))
        best_s = np.full(n, -np.inf)
        if len(cand):
            out = self._bary(cand, pts[pid])
            if self.mesh.is_surface:
                w, dist = out
                score = -dist
            else:
                w = out
                score = w.min(1)
            order = np.lexsort((-score, pid))
            first = order[np.r_[True, pid[order][1:] != pid[order][:-1]]]
            best_e[pid[first]] = cand[first]
            best_w[pid[first]] = w[first]
            best_s[pid[first]] = score[first]
        if self.mesh.is_surface:
            need = np.nonzero(-best_s > self.margin)[0]
        else:
            need = np.nonzero(best_s < -1e-12)[0]
        for i in need:
            e, w, ok = self._scan(pts[i])
            if not ok:
                raise OutsideDomain(f"location {offset + i} lies outside the mesh", index=offset + i)
            best_e[i], best_w[i] = e, w
        return best_e, _clean_weights(best_w)

    def _scan(self, p):
        """Linear scan over all elements for one point."""
        m = self.mesh.n_simplices
        best = (-1, None, np.inf)
        for a in range(0, m, _CHUNK):
            elems = np.arange(a, min(a + _CHUNK, m))
            P = np.broadcast_to(p, (len(elems), len(p)))
            if self.mesh.is_surface:
                w, dist = self._bary(elems, P)
            else:
                w = np.clip(self._bary(elems, P), 0.0, None)
                w /= w.sum(1, keepdims=True)
                rec = np.einsum("ek,ekj->ej", w, self.mesh.vertices[self.mesh.simplices[elems]])
                dist = np.linalg.norm(rec - p, axis=1)
            k = int(np.argmin(dist))
            if dist[k] < best[2]:
                best = (int(elems[k]), w[k], float(dist[k]))
        e, w, dist = best
        if e < 0:
            return e, w, False
        ok = self.mesh.is_surface or dist <= self.snap
        return e, w, ok


def _clean_weights(w):
    w = np.where(np.abs(w) < 1e-13, 0.0, w)
    w = np.clip(w, 0.0, None)
    return w / w.sum(1, keepdims=True)


def _closest_on_triangles(tri, p):
    """Barycentric weights of the closest point on each triangle and its distance."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e0, e1 = b - a, c - a
    r = p - a
    d00 = np.einsum("ij,ij->i", e0, e0)
    d01 = np.einsum("ij,ij->i", e0, e1)
    d11 = np.einsum("ij,ij->i", e1, e1)
    d20 = np.einsum("ij,ij->i", r, e0)
    d21 = np.einsum("ij,ij->i", r, e1)
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    bary = np.column_stack([1 - v - w, v, w])
    inside = (bary >= 0).all(1)
    if not inside.all():
        out = ~inside
        cands = []
        for i, j in ((0, 1), (1, 2), (2, 0)):
            pi, pj = tri[out, i], tri[out, j]
            seg = pj - pi
            t = np.einsum("ij,ij->i", p[out] - pi, seg) / np.einsum("ij,ij->i", seg, seg)
            t = np.clip(t, 0.0, 1.0)
            q = pi + t[:, None] * seg
            bw = np.zeros((out.sum(), 3))
            bw[:, i] = 1 - t
            bw[:, j] = t
            cands.append((np.linalg.norm(p[out] - q, axis=1), bw))
        dists = np.stack([c[0] for c in cands], 1)
        k = dists.argmin(1)
        bary[out] = np.stack([c[1] for c in cands], 1)[np.arange(out.sum()), k]
    rec = np.einsum("ek,ekj->ej", bary, tri)
    return bary, np.linalg.norm(rec - p, axis=1)


def locate(mesh, point, locator=None):
    """Locate one point: ``(simplex index, barycentric weights)``."""
    loc = locator or PointLocator(mesh)
    e, w = loc.locate(np.asarray(point, dtype=float)[None, :])
    return int(e[0]), w[0]


# ---------------------------------------------------------------------------
# anisotropy and metric
# ---------------------------------------------------------------------------


def rotation_2d(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    R = np.empty(theta.shape + (2, 2))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    return R


@dataclass(frozen=True, eq=False)
class AnisotropyField:
    """Per-vertex anisotropy ranges and rotations.

    ``rotation`` holds one angle per vertex in 2D, or one proper rotation
    matrix per vertex in 3D.  The first range is taken along the first
    rotated axis.
    """

    ranges: np.ndarray
    rotation: np.ndarray
    constant: bool = False

    def __post_init__(self):
        rho = np.atleast_2d(np.asarray(self.ranges, dtype=float))
        rot = np.asarray(self.rotation, dtype=float)
        d = rho.shape[1]
        if d not in (2, 3):
            raise MissingField("ranges must have 2 or 3 columns")
        if not np.all(np.isfinite(rho)) or np.any(rho <= 0):
            raise MissingField("anisotropy ranges must be finite and positive")
        if d == 2:
            rot = np.broadcast_to(rot.reshape(-1), (rho.shape[0],)).copy()
            if not np.all(np.isfinite(rot)):
                raise MissingField("non-finite anisotropy angle")
        else:
            rot = rot.reshape(-1, 3, 3)
            rot = np.broadcast_to(rot, (rho.shape[0], 3, 3)).copy()
            err = np.abs(np.einsum("nji,njk->nik", rot, rot) - np.eye(3)).max(initial=0.0)
            if err > 1e-12 or np.any(np.abs(np.linalg.det(rot) - 1) > 1e-12):
                raise MissingField("rotation matrices must be orthonormal with det +1")
        object.__setattr__(self, "ranges", _frozen(rho))
        object.__setattr__(self, "rotation", _frozen(rot))

    @property
    def dim(self):
        return self.ranges.shape[1]

    @property
    def n(self):
        return self.ranges.shape[0]

    @classmethod
    def constant_field(cls, n, ranges, rotation=0.0):
        rho = np.tile(np.asarray(ranges, dtype=float), (n, 1))
        rot = np.asarray(rotation, dtype=float)
        if rho.shape[1] == 2:
            rot = np.full(n, float(rot))
        else:
            rot = np.tile(rot.reshape(1, 3, 3), (n, 1, 1))
        return cls(rho, rot, constant=True)

    def rotation_matrices(self):
        if self.dim == 2:
            return rotation_2d(self.rotation)
        return np.asarray(self.rotation)


def load_anisotropy(path, d):
    """Read a per-vertex anisotropy CSV (header row mandatory).

    Columns are ``rho1..rho_d`` followed by ``theta`` (d=2) or the 9 entries
    of the rotation matrix in row-major order (d=3).
    """
    _, arr = _read_csv_matrix(Path(path), float)
    need = d + (1 if d == 2 else 9)
    if arr.shape[1] != need:
        raise ParseError(f"{path}: expected {need} columns, got {arr.shape[1]}")
    return AnisotropyField(arr[:, :d], arr[:, d:] if d == 3 else arr[:, d])


@dataclass(frozen=True)
class MetricTensor:
    G: np.ndarray
    G_inv: np.ndarray
    sqrt_det: float


def _element_parameters(field, simp):
    """Vertex-averaged ranges and rotations for a block of elements."""
    if field.constant:
        v0 = simp[:, 0]
        return field.ranges[v0], field.rotation_matrices()[v0] if field.dim == 3 else rotation_2d(field.rotation[v0])
    rho = field.ranges[simp].mean(1)
    if field.dim == 2:
        th2 = 2.0 * field.rotation[simp]
        ang = 0.5 * np.arctan2(np.sin(th2).mean(1), np.cos(th2).mean(1))
        return rho, rotation_2d(ang)
    R = field.rotation[simp]  # (m, k, 3, 3)
    ref = R[:, :1]
    diag = np.einsum("mkij,mlij->mlj", ref, R)  # diag of ref^T R_l, (m, k, 3)
    flips = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    choice = np.argmax(np.einsum("mkj,fj->mkf", diag, flips), axis=-1)
    R = R * flips[choice][:, :, None, :]
    U, _, Vt = np.linalg.svd(R.mean(1))
    det = np.sign(np.linalg.det(U @ Vt))
    U[:, :, -1] *= det[:, None]
    return rho, U @ Vt


def element_metrics(mesh, field=None, start=0, stop=None):
    """Per-element metric ``(G, G_inv, sqrt_det)`` for elements ``start:stop``.

    Without a field the metric is Euclidean (induced metric on surfaces).
    """
    simp = mesh.simplices[start:stop]
    m, d = len(simp), mesh.dim
    if field is None:
        eye = np.broadcast_to(np.eye(d), (m, d, d))
        return eye, eye, np.ones(m)
    if mesh.is_surface:
        raise MissingField("anisotropy fields are supported on flat meshes only")
    if field.n != mesh.n or field.dim != d:
        raise MissingField(
            f"field defined on {field.n} vertices in {field.dim}D, mesh has {mesh.n} in {d}D"
        )
    rho, R = _element_parameters(field, simp)
    G = np.einsum("mij,mj,mkj->mik", R, rho**-2, R)
    G_inv = np.einsum("mij,mj,mkj->mik", R, rho**2, R)
    return G, G_inv, 1.0 / rho.prod(1)


def metric_at(field, mesh, element):
    """Metric tensor of one element, from its vertex-averaged parameters."""
    if not 0 <= element < mesh.n_simplices:
        raise IndexError(f"element {element} out of range")
    G, G_inv, sd = element_metrics(mesh, field, element, element + 1)
    return MetricTensor(np.array(G[0]), np.array(G_inv[0]), float(sd[0]))
