"""Rigid transforms in homogeneous coordinates.

Points are column vectors; arrays of points are stored row-wise (M x 3) and
transformed as ``points @ R.T + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


class TransformError(ValueError):
    pass


def _check_matrix(matrix: np.ndarray, tol: float = ORTHO_TOL) -> None:
    if matrix.shape != (4, 4):
        raise TransformError(f"expected a 4x4 matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise TransformError("transform contains non-finite entries")
    if not np.array_equal(matrix[3], [0.0, 0.0, 0.0, 1.0]):
        raise TransformError(f"last row must be (0, 0, 0, 1), got {matrix[3]}")
    rot = matrix[:3, :3]
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > tol:
        raise TransformError("rotation block is not orthonormal")
    if abs(np.linalg.det(rot) - 1.0) > tol:
        raise TransformError("rotation block has determinant != +1")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A proper rigid motion (rotation in SO(3) plus translation in meters)."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        _check_matrix(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Rotation by ``yaw`` radians about +z followed by a translation."""
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls.from_rt(rot, translation)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> RigidTransform:
        return RigidTransform(invert_matrix(self.matrix))

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self @ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(self.matrix @ other.matrix)

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        return apply_matrix(self.matrix, points)

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, rtol=0.0, atol=atol))

    def __repr__(self):
        return f"RigidTransform(t={self.translation.tolist()})"


def invert_matrix(matrix: np.ndarray) -> np.ndarray:
    """Closed-form inverse of a rigid 4x4 (or a stack of them, ... x 4 x 4)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    rot_t = np.swapaxes(matrix[..., :3, :3], -1, -2)
    out = np.zeros_like(matrix)
    out[..., :3, :3] = rot_t
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", rot_t, matrix[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def apply_matrix(matrix: np.ndarray, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points @ matrix[:3, :3].T + matrix[:3, 3]


def as_matrix(pose) -> np.ndarray:
    if isinstance(pose, RigidTransform):
        return pose.matrix
    return np.asarray(pose, dtype=np.float64)
