"""Pinhole camera geometry.

Conventions used everywhere in the package:

* World frame is z-up; the ground plane is ``z = 0``.
* Camera frame follows the OpenCV layout: +x right, +y down, +z forward.
* A :class:`CameraPose` is a camera-to-world transform. ``rotation`` columns are
  the camera axes expressed in world coordinates and ``translation`` is the
  camera centre, so ``p_world = R @ p_cam + t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCameraError, ShapeError

WORLD_UP = np.array([0.0, 0.0, 1.0])
SENSOR_WIDTH_MM = 36.0


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            raise ShapeError(f"expected a 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def position(self) -> np.ndarray:
        return self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "CameraPose":
        rt = self.rotation.T
        return CameraPose(rt, -rt @ self.translation)

    def __matmul__(self, other: "CameraPose") -> "CameraPose":
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def world_to_camera(self, points) -> np.ndarray:
        """Map world points of shape (..., 3) into camera coordinates."""
        p = np.asarray(points, dtype=np.float64)
        return (p - self.translation) @ self.rotation

    def is_valid(self, tol: float = 1e-6) -> bool:
        r = self.rotation
        return bool(
            np.abs(r.T @ r - np.eye(3)).max() <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
        )


@dataclass(frozen=True)
class Intrinsics:
    fpx: float
    cx: float
    cy: float

    @classmethod
    def from_focal_mm(cls, focal_mm: float, width: int, height: int) -> "Intrinsics":
        # full-frame sensor; principal point at the image centre
        fpx = focal_mm / SENSOR_WIDTH_MM * width
        return cls(float(fpx), width / 2.0, height / 2.0)

    def is_valid(self, width: int, height: int) -> bool:
        return self.fpx > 0 and 0 <= self.cx <= width and 0 <= self.cy <= height


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def rotation_angle(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotations."""
    c = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _cross(a, b) -> np.ndarray:
    # np.cross carries a lot of overhead for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def look_at(eye, target, up=WORLD_UP) -> CameraPose:
    """Camera at ``eye`` whose optical axis passes through ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("look_at: eye and target coincide")
    fwd = fwd / n
    right = _cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValueError("look_at: view direction parallel to up vector")
    right = right / rn
    down = _cross(fwd, right)
    return CameraPose(np.stack([right, down, fwd], axis=1), eye)


def pitch_deg(pose: CameraPose) -> float:
    """Elevation of the optical axis above the horizon, degrees (negative = looking down)."""
    return float(np.degrees(np.arcsin(np.clip(pose.forward[2], -1.0, 1.0))))


def project(point, pose: CameraPose, intrinsics: Intrinsics):
    """Project a world point; returns ``(uv, depth)``.

    Raises BehindCameraError when the point is not in front of the camera.
    """
    x, y, z = pose.world_to_camera(point)
    if z <= 0:
        raise BehindCameraError(f"point has depth {z:.4g} <= 0")
    uv = np.array([intrinsics.cx + intrinsics.fpx * x / z, intrinsics.cy + intrinsics.fpx * y / z])
    return uv, float(z)


def project_many(points, pose: CameraPose, intrinsics: Intrinsics):
    """Vectorised projection without the depth check; returns (uv, depth)."""
    pc = pose.world_to_camera(points)
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.cx + intrinsics.fpx * pc[..., 0] / z
        v = intrinsics.cy + intrinsics.fpx * pc[..., 1] / z
    return np.stack([u, v], axis=-1), z


def pixel_rays(pose: CameraPose, intrinsics: Intrinsics, width: int, height: int) -> np.ndarray:
    """Unit world-space ray directions through pixel centres, shape (h, w, 3)."""
    u = np.arange(width) + 0.5
    v = np.arange(height) + 0.5
    uu, vv = np.meshgrid(u, v)
    d = np.stack(
        [(uu - intrinsics.cx) / intrinsics.fpx, (vv - intrinsics.cy) / intrinsics.fpx, np.ones_like(uu)],
        axis=-1,
    )
    d = d @ pose.rotation.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def backproject_ray(uv, pose: CameraPose, intrinsics: Intrinsics):
    """World-space (origin, unit direction) of the ray through pixel ``uv``."""
    d = np.array([(uv[0] - intrinsics.cx) / intrinsics.fpx, (uv[1] - intrinsics.cy) / intrinsics.fpx, 1.0])
    d = pose.rotation @ d
    return pose.translation.copy(), d / np.linalg.norm(d)


def triangulate_midpoint(o1, d1, o2, d2) -> np.ndarray:
    """Midpoint of the shortest segment between two rays."""
    w0 = o1 - o2
    a, b, c = d1 @ d1, d1 @ d2, d2 @ d2
    d, e = d1 @ w0, d2 @ w0
    den = a * c - b * b
    if abs(den) < 1e-12:
        # parallel rays: fall back to the foot point on ray 2 of origin 1
        s, u = 0.0, e / c
    else:
        s = (b * e - c * d) / den
        u = (a * e - b * d) / den
    return 0.5 * ((o1 + s * d1) + (o2 + u * d2))
