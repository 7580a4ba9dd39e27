"""Pinhole camera model and rigid 6-DoF pose algebra.

Conventions (used everywhere in the package):
  * world frame: right-handed, marker plane at z = 0, marker center at the
    origin, z up;
  * camera frame: +x right, +y down, +z forward (optical axis);
  * a camera pose maps world -> camera;
  * units: millimeters for lengths, pixels for image coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DepthError

__all__ = [
    "Pose6DoF",
    "CameraIntrinsics",
    "DEFAULT_INTRINSICS",
    "Behind",
    "project",
    "project_points",
    "unproject",
    "pose_compose",
    "pose_invert",
    "rotation_about_axis",
    "nearest_rotation",
]

_ORTHO_TOL = 1e-9


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Closest proper rotation to ``m`` in the Frobenius sense (via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1.0
        r = u @ vt
    return r


@dataclass(frozen=True)
class Pose6DoF:
    """Rigid transform: x' = rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("pose entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def __eq__(self, other):
        return (
            isinstance(other, Pose6DoF)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    @staticmethod
    def identity() -> "Pose6DoF":
        return Pose6DoF(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point or an (n, 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def almost_equal(self, other: "Pose6DoF", tol: float = 1e-9) -> bool:
        return (
            np.max(np.abs(self.rotation - other.rotation)) <= tol
            and np.max(np.abs(self.translation - other.translation)) <= tol
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near_mm: float = 10.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.near_mm <= 0:
            raise ValueError("fx, fy, near_mm must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


# Resolution of the chrominance processing path; fx chosen so a desk-scale
# scene at 250-600 mm fills a useful part of the frame.
DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=800.0, fy=800.0, cx=480.0, cy=360.0, width=960, height=720, near_mm=10.0
)


class _Behind:
    """Sentinel: point is at or behind the near plane."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Behind"


Behind = _Behind()


def project(point_world, camera_pose: Pose6DoF, k: CameraIntrinsics):
    """Project a world point to (u, v, depth); returns ``Behind`` if z <= near."""
    pc = camera_pose.apply(np.asarray(point_world, dtype=float))
    z = pc[2]
    if z <= k.near_mm:
        return Behind
    return (k.fx * pc[0] / z + k.cx, k.fy * pc[1] / z + k.cy, z)


def project_points(points_world: np.ndarray, camera_pose: Pose6DoF, k: CameraIntrinsics):
    """Vectorized projection of an (n, 3) array.

    Returns (uv, depth, in_front) where behind-near points carry NaN uv.
    """
    pc = camera_pose.apply(np.asarray(points_world, dtype=float))
    z = pc[:, 2]
    in_front = z > k.near_mm
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * pc[:, 0] / z + k.cx
        v = k.fy * pc[:, 1] / z + k.cy
    uv = np.stack([u, v], axis=1)
    uv[~in_front] = np.nan
    return uv, z, in_front


def unproject(u: float, v: float, depth: float, camera_pose: Pose6DoF, k: CameraIntrinsics):
    """Inverse of :func:`project` at the same pose and intrinsics."""
    if depth <= 0:
        raise DepthError(f"depth must be positive, got {depth}")
    pc = np.array([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth])
    inv = pose_invert(camera_pose)
    return inv.apply(pc)


def pose_compose(a: Pose6DoF, b: Pose6DoF) -> Pose6DoF:
    """Composition: (a o b)(x) = a(b(x))."""
    return Pose6DoF(
        nearest_rotation(a.rotation @ b.rotation),
        a.rotation @ b.translation + a.translation,
    )


def pose_invert(a: Pose6DoF) -> Pose6DoF:
    return Pose6DoF(a.rotation.T, -(a.rotation.T @ a.translation))


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    ax = np.asarray(axis, dtype=float)
    n = np.linalg.norm(ax)
    if n == 0:
        return np.eye(3)
    x, y, z = ax / n
    kmat = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle_rad) * kmat + (1 - np.cos(angle_rad)) * (kmat @ kmat)
