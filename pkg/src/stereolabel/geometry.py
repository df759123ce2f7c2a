"""Calibrated pinhole/stereo camera math.

Conventions used bit-consistently across the toolkit:

* Pixel coordinates are continuous, with integer values at pixel centers
  and the origin at the top-left pixel center; ``u`` grows rightward and
  ``v`` downward.
* ``UVD`` is a left-image pixel position plus disparity ``d = u_left -
  u_right`` of a rectified stereo pair (epipolar lines horizontal, right
  camera displaced along +X of the left camera frame).
* ``XYZ`` is a metric point in the left-camera frame, z forward.
* Distortion coefficients are ordered ``[k1, k2, p1, p2, k3]`` (radial
  k1..k3, tangential p1/p2) and applied in normalized image coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BehindCameraError, InvalidDisparityError

_ORTHONORMAL_TOL = 1e-6  # admits rotations round-tripped through 9-digit JSON


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels, plus optional distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: tuple[float, ...] = ()

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width):
            raise ValueError(f"cx={self.cx} outside [0, {self.width})")
        if not (0 <= self.cy < self.height):
            raise ValueError(f"cy={self.cy} outside [0, {self.height})")
        object.__setattr__(self, "distortion", tuple(float(c) for c in self.distortion))

    @property
    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in self.distortion)

    def without_distortion(self) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def matrix(self) -> np.ndarray:
        """3x3 calibration matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class UVD:
    """Left-image pixel (u, v) plus disparity d (px)."""

    u: float
    v: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.d])


@dataclass(frozen=True)
class XYZ:
    """Metric point in the left-camera frame (m), z forward."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.x, self.y, self.z])):
            raise ValueError("XYZ components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if np.linalg.norm(rot @ rot.T - np.eye(3)) > _ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation must be proper (det +1), got a reflection")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def invert(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack of points (N, 3)."""
        p = np.asarray(p, dtype=float)
        return p @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class StereoRig:
    """Rectified stereo pair: left intrinsics plus metric baseline.

    The right camera shares the left intrinsics and is displaced by
    ``baseline`` along the +X axis of the left camera frame, so epipolar
    lines are horizontal and disparity is ``u_left - u_right``.
    """

    left: CameraIntrinsics
    baseline: float

    def __post_init__(self):
        if self.baseline <= 0:
            raise ValueError(f"baseline must be positive, got {self.baseline}")
        if self.left.has_distortion:
            raise ValueError("rectified rig requires distortion-free left intrinsics")


def distort_normalized(intr: CameraIntrinsics, xn: np.ndarray, yn: np.ndarray):
    """Apply the radial/tangential model to normalized coordinates."""
    coeffs = list(intr.distortion) + [0.0] * (5 - len(intr.distortion))
    k1, k2, p1, p2, k3 = coeffs[:5]
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = xn * radial + 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
    return xd, yd


def project_points(intr: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Project camera-frame points (N, 3) to pixel coordinates (N, 2).

    Raises BehindCameraError if any point has z <= 0.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("cannot project points with z <= 0")
    xn = pts[:, 0] / z
    yn = pts[:, 1] / z
    if intr.has_distortion:
        xn, yn = distort_normalized(intr, xn, yn)
    return np.column_stack((intr.fx * xn + intr.cx, intr.fy * yn + intr.cy))


def project(intr: CameraIntrinsics, p: XYZ) -> tuple[float, float]:
    """Project one camera-frame point to a (u, v) pixel pair."""
    uv = project_points(intr, p.as_array())
    return float(uv[0, 0]), float(uv[0, 1])


def uvd_to_xyz(rig: StereoRig, k: UVD) -> XYZ:
    """Reproject a UVD triplet to a metric point in the left-camera frame.

    z = fx*b/d, then the pinhole back-projection of (u, v) at that depth.
    """
    if k.d <= 0:
        raise InvalidDisparityError(f"disparity must be positive, got {k.d}")
    z = rig.left.fx * rig.baseline / k.d
    x = (k.u - rig.left.cx) * z / rig.left.fx
    y = (k.v - rig.left.cy) * z / rig.left.fy
    return XYZ(x, y, z)


def xyz_to_uvd(rig: StereoRig, p: XYZ) -> UVD:
    """Exact inverse of :func:`uvd_to_xyz` on z > 0."""
    if p.z <= 0:
        raise BehindCameraError(f"point behind camera, z={p.z}")
    u = rig.left.fx * p.x / p.z + rig.left.cx
    v = rig.left.fy * p.y / p.z + rig.left.cy
    d = rig.left.fx * rig.baseline / p.z
    return UVD(u, v, d)


def uvd_to_xyz_array(rig: StereoRig, uvd: np.ndarray) -> np.ndarray:
    """Vectorized uvd_to_xyz on an (N, 3) array of UVD rows."""
    uvd = np.asarray(uvd, dtype=float).reshape(-1, 3)
    if np.any(uvd[:, 2] <= 0):
        raise InvalidDisparityError("disparity must be positive")
    z = rig.left.fx * rig.baseline / uvd[:, 2]
    x = (uvd[:, 0] - rig.left.cx) * z / rig.left.fx
    y = (uvd[:, 1] - rig.left.cy) * z / rig.left.fy
    return np.column_stack((x, y, z))


def xyz_to_uvd_array(rig: StereoRig, pts: np.ndarray) -> np.ndarray:
    """Vectorized xyz_to_uvd on an (N, 3) array of camera-frame points."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if np.any(pts[:, 2] <= 0):
        raise BehindCameraError("point behind camera")
    z = pts[:, 2]
    u = rig.left.fx * pts[:, 0] / z + rig.left.cx
    v = rig.left.fy * pts[:, 1] / z + rig.left.cy
    d = rig.left.fx * rig.baseline / z
    return np.column_stack((u, v, d))


def depth_sensitivity(rig: StereoRig, z: float) -> float:
    """Change of depth per unit change of disparity, dz/dd = -z^2/(fx*b).

    Negative: larger disparity means smaller depth.  The magnitude grows
    quadratically with range, which is why far-field disparity errors
    dominate metric error.
    """
    if z <= 0:
        raise ValueError(f"depth must be positive, got {z}")
    return -(z * z) / (rig.left.fx * rig.baseline)


def camera_center(world_to_camera: RigidTransform) -> np.ndarray:
    """World position of the camera optical center."""
    return -(world_to_camera.rotation.T @ world_to_camera.translation)


def optical_axis(world_to_camera: RigidTransform) -> np.ndarray:
    """World direction of the camera +z (viewing) axis."""
    return world_to_camera.rotation.T @ np.array([0.0, 0.0, 1.0])


def look_at(camera_pos: np.ndarray, target: np.ndarray, up: np.ndarray | None = None) -> RigidTransform:
    """World->camera transform for a camera at ``camera_pos`` looking at ``target``.

    The camera +z axis points at the target and image up approximates the
    ``up`` hint (default world +z, so a board on the z=0 plane is upright).
    """
    camera_pos = np.asarray(camera_pos, dtype=float)
    target = np.asarray(target, dtype=float)
    fwd = target - camera_pos
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("camera position coincides with target")
    fwd = fwd / n
    if up is None:
        up = np.array([0.0, 0.0, 1.0])
    up = np.asarray(up, dtype=float)
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:  # looking straight along the up hint; pick any lateral axis
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        rn = np.linalg.norm(right)
        if rn < 1e-9:
            right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
            rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    rot = np.stack((right, down, fwd))  # rows: camera axes in world coords
    return RigidTransform(rot, -rot @ camera_pos)


def rotation_about_x(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


_EYE3 = np.eye(3)


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map: 3-vector to rotation matrix."""
    w = np.asarray(w, dtype=float).reshape(3)
    theta = float(np.sqrt(w @ w))
    wx = np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )
    if theta < 1e-12:
        return _EYE3 + wx  # first-order term keeps tiny steps exact enough
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return _EYE3 + a * wx + b * (wx @ wx)


def so3_log(rot: np.ndarray) -> np.ndarray:
    """Inverse of :func:`so3_exp`; returns the axis-angle 3-vector."""
    rot = np.asarray(rot, dtype=float)
    cos_theta = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-12:
        return np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # near pi: extract the axis from the symmetric part
        m = (rot + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        # fix signs from off-diagonals using the largest component
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = axis.copy()
            for j in range(3):
                if j != i and m[i, j] < 0:
                    axis[j] = -axis[j]
        return axis / np.linalg.norm(axis) * theta
    vee = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return vee * theta / (2.0 * np.sin(theta))


def rotation_angle(rot: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    return float(np.linalg.norm(so3_log(rot)))
