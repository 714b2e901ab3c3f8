"""Label transfer from the central surface to the inner and outer surfaces."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mesh import UNLABELED, TriangleMesh, check_labels, vertex_normals
from .spatial import PointIndex


class PropagationDirection(enum.Enum):
    TO_INNER = "inner"
    TO_OUTER = "outer"

    @property
    def sign(self) -> float:
        # central sits along +normal of the inner surface, -normal of the outer
        return 1.0 if self is PropagationDirection.TO_INNER else -1.0

    @classmethod
    def parse(cls, value) -> PropagationDirection:
        if isinstance(value, cls):
            return value
        v = str(value).lower().removeprefix("to_").removeprefix("to-")
        try:
            return cls(v)
        except ValueError:
            raise ValidationError(f"unknown propagation direction {value!r}") from None


@dataclass(frozen=True, eq=False)
class SurfaceSet:
    inner: TriangleMesh
    central: TriangleMesh
    outer: TriangleMesh

    @property
    def shared_topology(self) -> bool:
        n = self.central.n_vertices
        return self.inner.n_vertices == n and self.outer.n_vertices == n

    def __getitem__(self, name: str) -> TriangleMesh:
        if name not in ("inner", "central", "outer"):
            raise KeyError(name)
        return getattr(self, name)

    def transformed(self, transform) -> SurfaceSet:
        return SurfaceSet(*(transform.apply_mesh(m) for m in (self.inner, self.central, self.outer)))


def propagate_labels(central: TriangleMesh, central_labels, target: TriangleMesh,
                     direction, return_fallback: bool = False):
    """Give each target vertex the label of its nearest admissible central vertex.

    A central vertex ``c`` is admissible for target vertex ``v`` with outward
    normal ``n`` when ``(c - v) . n >= 0`` (towards the inner surface) or
    ``<= 0`` (towards the outer surface). When nothing is admissible the plain
    nearest central vertex is used. Distance ties go to the smaller central
    index.
    """
    direction = PropagationDirection.parse(direction)
    if central.n_vertices == 0:
        raise ValidationError("central mesh is empty")
    central_labels = check_labels(central_labels, central.n_vertices)
    if np.any(central_labels == UNLABELED):
        raise ValidationError("central surface has unlabeled vertices")
    if target.n_vertices == 0:
        out = np.zeros(0, dtype=np.int64)
        return (out, np.zeros(0, dtype=bool)) if return_fallback else out
    normals = vertex_normals(target)
    index = PointIndex(central.vertices)
    match, fallback = index.nearest_in_halfspace(target.vertices, normals, direction.sign)
    out = central_labels[match]
    if return_fallback:
        return out, fallback
    return out
