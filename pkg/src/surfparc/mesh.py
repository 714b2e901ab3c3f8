"""Triangle meshes, 1-ring adjacency, normals, label components and areas."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateGeometryError, ValidationError

UNLABELED = 0


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Vertex positions in world millimetres plus a triangle index list.

    Arrays are copied and made read-only on construction.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        f = np.array(self.faces, dtype=np.int64)
        if v.size == 0:
            v = v.reshape(0, 3)
        if f.size == 0:
            f = f.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError(f"vertices must have shape (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValidationError(f"faces must have shape (m, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            bad = np.flatnonzero(~np.all(np.isfinite(v), axis=1))
            raise ValidationError("non-finite vertex coordinates", vertices=bad[:20].tolist())
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                bad = np.flatnonzero(np.any((f < 0) | (f >= len(v)), axis=1))
                raise ValidationError(
                    f"face index out of range for {len(v)} vertices",
                    faces=bad[:20].tolist(),
                )
            repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if repeated.any():
                raise ValidationError(
                    "face with repeated vertex index",
                    faces=np.flatnonzero(repeated)[:20].tolist(),
                )
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def adjacency(self) -> Adjacency:
        return build_adjacency(self)

    @cached_property
    def face_areas(self) -> np.ndarray:
        return np.linalg.norm(_face_cross(self), axis=1) / 2.0

    def transformed(self, rotation, translation) -> TriangleMesh:
        return TriangleMesh(self.vertices @ np.asarray(rotation).T + translation, self.faces)


@dataclass(frozen=True, eq=False)
class Adjacency:
    """Per-vertex 1-ring stored in CSR form; each ring is sorted ascending."""

    indptr: np.ndarray
    indices: np.ndarray

    def ring(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def __len__(self):
        return len(self.indptr) - 1

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed edge list ``(src, dst)``; each undirected edge appears twice."""
        src = np.repeat(np.arange(len(self), dtype=np.int64), self.degrees())
        return src, self.indices

    def to_sparse(self) -> csr_matrix:
        n = len(self)
        data = np.ones(len(self.indices), dtype=np.int8)
        return csr_matrix((data, self.indices, self.indptr), shape=(n, n))


def build_adjacency(mesh: TriangleMesh) -> Adjacency:
    n = mesh.n_vertices
    f = mesh.faces
    src = np.concatenate([f[:, 0], f[:, 1], f[:, 2], f[:, 1], f[:, 2], f[:, 0]])
    dst = np.concatenate([f[:, 1], f[:, 2], f[:, 0], f[:, 0], f[:, 1], f[:, 2]])
    if len(src):
        key = np.unique(src * n + dst)
        src, dst = key // n, key % n
    counts = np.bincount(src, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return Adjacency(_frozen(indptr), _frozen(dst.astype(np.int64)))


def _face_cross(mesh: TriangleMesh) -> np.ndarray:
    v = mesh.vertices
    f = mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return np.cross(b - a, c - a)


def vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    """Unit vertex normals, area weighted over incident faces.

    The face cross product has length twice the face area, so summing raw cross
    products gives the area weighting for free. Orientation follows the
    counter-clockwise winding of each face.

    Raises
    ------
    DegenerateGeometryError
        If a vertex has no incident face of non-zero area, or if its incident
        normals cancel out.
    """
    n = mesh.n_vertices
    cross = _face_cross(mesh)
    lengths = np.linalg.norm(cross, axis=1)
    if len(mesh.faces):
        edge = mesh.vertices[mesh.faces[:, 1]] - mesh.vertices[mesh.faces[:, 0]]
        scale = max(float(np.max(np.abs(edge))), 1e-300) ** 2
    else:
        scale = 1.0
    good = lengths > 1e-14 * scale
    support = np.zeros(n, dtype=bool)
    support[mesh.faces[good].ravel()] = True
    if not support.all():
        bad = np.flatnonzero(~support)
        raise DegenerateGeometryError(
            f"vertex {bad[0]} has no non-degenerate incident face",
            vertices=bad[:20].tolist(),
        )
    acc = np.zeros((n, 3))
    for k in range(3):
        np.add.at(acc, mesh.faces[good, k], cross[good])
    norms = np.linalg.norm(acc, axis=1)
    if np.any(norms == 0):
        bad = np.flatnonzero(norms == 0)
        raise DegenerateGeometryError(
            f"incident face normals cancel at vertex {bad[0]}", vertices=bad[:20].tolist()
        )
    return acc / norms[:, None]


def check_labels(labels, n_vertices: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != n_vertices:
        raise ValidationError(
            f"label array of length {labels.size} does not match {n_vertices} vertices"
        )
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValidationError("labels must be integers")
    labels = labels.astype(np.int64)
    if labels.size and labels.min() < 0:
        raise ValidationError("labels must be non-negative")
    return labels


def label_components(mesh: TriangleMesh, labels) -> dict[int, list[np.ndarray]]:
    """Connected components of each label's induced vertex subgraph.

    Two vertices are connected when they share a mesh edge and carry the same
    label. For every label present the components are returned as sorted index
    arrays, largest first; equal sizes are ordered by their smallest vertex.
    """
    labels = check_labels(labels, mesh.n_vertices)
    n = mesh.n_vertices
    if n == 0:
        return {}
    src, dst = mesh.adjacency.edges()
    keep = labels[src] == labels[dst]
    graph = coo_matrix(
        (np.ones(int(keep.sum()), dtype=np.int8), (src[keep], dst[keep])), shape=(n, n)
    )
    _, comp = connected_components(graph, directed=False)
    # relabel components by their smallest vertex so the result does not
    # depend on scipy's traversal
    first = np.full(comp.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(n))
    comp = first[comp]

    order = np.lexsort((np.arange(n), comp))
    comp_sorted = comp[order]
    starts = np.flatnonzero(np.r_[True, comp_sorted[1:] != comp_sorted[:-1]])
    groups = np.split(order, starts[1:])

    out: dict[int, list[np.ndarray]] = {}
    for g in groups:
        out.setdefault(int(labels[g[0]]), []).append(g)
    for lab, comps in out.items():
        comps.sort(key=lambda c: (-len(c), int(c[0])))
    return dict(sorted(out.items()))


def per_label_area(mesh: TriangleMesh, labels) -> dict[int, float]:
    """Surface area per label, each triangle split in thirds among its corners."""
    labels = check_labels(labels, mesh.n_vertices)
    third = np.repeat(mesh.face_areas / 3.0, 3)
    corner_labels = labels[mesh.faces.ravel()]
    present = np.unique(labels)
    totals = np.bincount(corner_labels, weights=third, minlength=int(labels.max(initial=0)) + 1)
    return {int(lab): float(totals[lab]) for lab in present}


def total_area(mesh: TriangleMesh) -> float:
    return float(mesh.face_areas.sum())
