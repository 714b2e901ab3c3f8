from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation`` with a proper rotation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValidationError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise ValidationError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValidationError("rotation has determinant != +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle_rad: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        x, y, z = axis
        k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
        r = np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * (k @ k)
        return cls(r, translation)

    @property
    def angle(self) -> float:
        """Rotation angle in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        # arccos is ill-conditioned near 0; use the antisymmetric part too
        s = np.linalg.norm([
            self.rotation[2, 1] - self.rotation[1, 2],
            self.rotation[0, 2] - self.rotation[2, 0],
            self.rotation[1, 0] - self.rotation[0, 1],
        ]) / 2.0
        return float(np.arctan2(s, c))

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_mesh(self, mesh):
        return type(mesh)(self.apply(mesh.vertices), mesh.faces)

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self`` after ``other``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> RigidTransform:
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


def relative_error(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """Rotation angle (rad) and translation distance (mm) between two transforms."""
    d = estimate.compose(truth.inverse())
    return d.angle, float(np.linalg.norm(estimate.translation - truth.translation))
