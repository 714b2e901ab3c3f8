"""Exact nearest-vertex queries with deterministic tie-breaking.

scipy's cKDTree proposes candidates; the final choice is always made on
distances computed here, so results equal an exhaustive scan: the smallest
squared distance wins and ties go to the smaller point index.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError

# relative slack on kd-tree radii so rounding never drops an exact tie
_SLACK = 1e-9


def sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise squared distance, spelled out per component."""
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    dz = a[..., 2] - b[..., 2]
    return dx * dx + dy * dy + dz * dz


def halfspace_dot(c: np.ndarray, v: np.ndarray, n: np.ndarray) -> np.ndarray:
    """``(c - v) . n`` row-wise."""
    return (c[..., 0] - v[..., 0]) * n[..., 0] + (c[..., 1] - v[..., 1]) * n[..., 1] \
        + (c[..., 2] - v[..., 2]) * n[..., 2]


def _flatten(groups):
    lens = np.fromiter((len(g) for g in groups), dtype=np.int64, count=len(groups))
    owner = np.repeat(np.arange(len(groups)), lens)
    flat = np.fromiter((i for g in groups for i in g), dtype=np.int64, count=int(lens.sum()))
    return owner, flat


def _pick(owner, cand, d2, n_queries):
    order = np.lexsort((cand, d2, owner))
    owner, cand = owner[order], cand[order]
    first = np.r_[True, owner[1:] != owner[:-1]]
    out = np.full(n_queries, -1, dtype=np.int64)
    out[owner[first]] = cand[first]
    return out


class PointIndex:
    """Immutable kd-tree over a point set with exact tie-aware queries."""

    def __init__(self, points):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
            raise ValidationError("point index needs a non-empty (n, 3) array")
        self.points = points
        self.tree = cKDTree(points)

    def __len__(self):
        return len(self.points)

    def _resolve(self, queries, radii, accept=None):
        """Among points within ``radii`` of each query pick the exact nearest.

        ``accept(query_idx, cand_idx)`` filters candidates.
        """
        groups = self.tree.query_ball_point(queries, radii * (1 + _SLACK) + 1e-12)
        owner, cand = _flatten(groups)
        if accept is not None:
            ok = accept(owner, cand)
            owner, cand = owner[ok], cand[ok]
        d2 = sqdist(self.points[cand], queries[owner])
        return _pick(owner, cand, d2, len(queries))

    def nearest(self, queries) -> np.ndarray:
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(queries) == 0:
            return np.zeros(0, dtype=np.int64)
        d, _ = self.tree.query(queries, k=1)
        return self._resolve(queries, np.asarray(d))

    def nearest_in_halfspace(self, queries, normals, sign: float):
        """Nearest point ``c`` with ``sign * (c - q) . n >= 0``.

        Falls back to the unrestricted nearest point when no point satisfies
        the test. Returns ``(indices, used_fallback)``.
        """
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        normals = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
        nq, n = len(queries), len(self.points)
        out = np.full(nq, -1, dtype=np.int64)
        fallback = np.zeros(nq, dtype=bool)

        def valid(qi, ci):
            return sign * halfspace_dot(self.points[ci], queries[qi], normals[qi]) >= 0

        # exact k-nearest expansion: grow k until some candidate passes the test,
        # then every point at least that close is examined exactly
        pending = np.arange(nq)
        radius = np.full(nq, np.inf)
        k = min(8, n)
        while len(pending):
            d, idx = self.tree.query(queries[pending], k=k)
            d = d.reshape(len(pending), -1)
            idx = idx.reshape(len(pending), -1)
            ok = valid(np.repeat(pending, k).reshape(-1, k), idx)
            found = ok.any(axis=1)
            first = np.argmax(ok, axis=1)
            radius[pending[found]] = d[found, first[found]]
            rest = pending[~found]
            if k >= n:
                fallback[rest] = True
                break
            pending = rest
            k = min(k * 4, n)

        has = np.isfinite(radius)
        if has.any():
            sub = np.flatnonzero(has)
            picked = self._resolve(
                queries[sub], radius[sub],
                accept=lambda qi, ci: valid(sub[qi], ci),
            )
            out[sub] = picked
        if fallback.any():
            sub = np.flatnonzero(fallback)
            out[sub] = self.nearest(queries[sub])
        return out, fallback


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point to ``p[i]`` on triangle ``(a[i], b[i], c[i])``, vectorised.

    Region classification after Ericson, *Real-Time Collision Detection*, 5.1.5.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        out = a + ab * v[:, None] + ac * w[:, None]

        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        out = np.where(m[:, None], a + ab * t[:, None], out)
        m2 = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        out = np.where(m2[:, None], a + ac * t[:, None], out)
        m3 = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(m3[:, None], b + (c - b) * t[:, None], out)

    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    return out


class SurfaceIndex:
    """Closest points on a triangle mesh.

    Candidate triangles are those touching the ``k`` nearest vertices, which
    finds the true closest point on any reasonably regular mesh.
    """

    def __init__(self, mesh, k: int = 4):
        self.mesh = mesh
        self.points = PointIndex(mesh.vertices)
        self.k = min(k, mesh.n_vertices)
        f = mesh.faces
        owner = f.ravel()
        face_id = np.repeat(np.arange(len(f)), 3)
        order = np.argsort(owner, kind="stable")
        self._faces_of = face_id[order]
        self._ptr = np.zeros(mesh.n_vertices + 1, dtype=np.int64)
        np.cumsum(np.bincount(owner, minlength=mesh.n_vertices), out=self._ptr[1:])

    def closest(self, queries) -> np.ndarray:
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        v = self.mesh.vertices
        _, near = self.points.tree.query(queries, k=self.k)
        near = near.reshape(len(queries), -1)
        best = v[near[:, 0]].copy()
        best_d = sqdist(best, queries)
        for col in range(near.shape[1]):
            vert = near[:, col]
            lo, hi = self._ptr[vert], self._ptr[vert + 1]
            for slot in range(int((hi - lo).max(initial=0))):
                has = lo + slot < hi
                qi = np.flatnonzero(has)
                fid = self._faces_of[lo[has] + slot]
                tri = self.mesh.faces[fid]
                cp = closest_point_on_triangles(queries[qi], v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]])
                d = sqdist(cp, queries[qi])
                better = d < best_d[qi]
                best[qi[better]] = cp[better]
                best_d[qi[better]] = d[better]
        return best
