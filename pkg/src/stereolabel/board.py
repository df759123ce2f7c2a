"""Camera pose from fiducial-board corner detections.

The board is planar (z = 0 in the world/board frame) and carries at least
four square tags with known corner positions.  Pose estimation minimizes
corner reprojection error by damped nonlinear least squares, initialized
from a planar homography decomposition.  Reprojection RMSE is reported per
corner point: sqrt(mean ||reprojected - detected||^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InsufficientTagsError, SolverDivergenceError
from .geometry import CameraIntrinsics, RigidTransform, project_points, so3_exp
from .optim import levenberg_marquardt

MIN_TAGS = 3


def pixel_rmse(deltas: np.ndarray) -> float:
    """RMSE of 2D pixel residuals (N, 2): sqrt(mean squared point error)."""
    deltas = np.asarray(deltas, dtype=float).reshape(-1, 2)
    return float(np.sqrt(np.mean(np.sum(deltas * deltas, axis=1))))


@dataclass(frozen=True)
class FiducialBoard:
    """Tag id -> (4, 3) corner positions in the board frame, z = 0 plane.

    Corners are ordered counter-clockwise viewed from +z.
    """

    tags: Mapping[int, np.ndarray]

    def __post_init__(self):
        if len(self.tags) < 4:
            raise ValueError(f"board needs >= 4 tags, got {len(self.tags)}")
        clean = {}
        for tag_id, corners in self.tags.items():
            c = np.asarray(corners, dtype=float)
            if c.shape == (4, 2):
                c = np.column_stack((c, np.zeros(4)))
            if c.shape != (4, 3):
                raise ValueError(f"tag {tag_id}: corners must be (4, 2) or (4, 3), got {c.shape}")
            if np.max(np.abs(c[:, 2])) > 1e-9:
                raise ValueError(f"tag {tag_id}: corners must lie in the z=0 board plane")
            # shoelace signed area; CCW viewed from +z is positive
            x, y = c[:, 0], c[:, 1]
            area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
            if area <= 0:
                raise ValueError(f"tag {tag_id}: corners must be counter-clockwise viewed from +z")
            clean[int(tag_id)] = c
        object.__setattr__(self, "tags", clean)

    @property
    def tag_ids(self) -> list[int]:
        return sorted(self.tags)

    def corners(self, tag_ids: Sequence[int] | None = None) -> np.ndarray:
        """Stacked (4n, 3) corners for the given tags (all tags by default)."""
        ids = self.tag_ids if tag_ids is None else sorted(tag_ids)
        return np.concatenate([self.tags[i] for i in ids], axis=0)

    @staticmethod
    def border_layout(board_size: float = 0.56, tag_size: float = 0.08) -> "FiducialBoard":
        """Eight tags along the borders of a square board centered on the origin.

        Four corner tags plus four edge-midpoint tags, mirroring the wide
        spread that gives pose estimation a strong baseline.
        """
        half = board_size / 2.0 - tag_size / 2.0
        centers = [
            (-half, -half), (0.0, -half), (half, -half),
            (half, 0.0), (half, half), (0.0, half),
            (-half, half), (-half, 0.0),
        ]
        s = tag_size / 2.0
        square = np.array([(-s, -s), (s, -s), (s, s), (-s, s)])  # CCW from +z
        return FiducialBoard(
            {i: square + np.array(c) for i, c in enumerate(centers)}
        )


@dataclass(frozen=True)
class TagDetections:
    """Detected tag corners for one frame: tag id -> (4, 2) pixel positions."""

    frame_id: str
    tags: Mapping[int, np.ndarray]

    def __post_init__(self):
        clean = {}
        for tag_id, corners in self.tags.items():
            c = np.asarray(corners, dtype=float)
            if c.shape != (4, 2):
                raise ValueError(f"tag {tag_id}: detections must be (4, 2), got {c.shape}")
            clean[int(tag_id)] = c
        object.__setattr__(self, "tags", clean)

    @property
    def tag_ids(self) -> list[int]:
        return sorted(self.tags)


@dataclass(frozen=True)
class PoseEstimate:
    pose: RigidTransform  # world -> camera
    rmse: float           # corner reprojection RMSE (px)
    n_tags: int

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("rmse must be >= 0")
        if self.n_tags < MIN_TAGS:
            raise ValueError(f"n_tags must be >= {MIN_TAGS}")


def _homography_dlt(obj_xy: np.ndarray, img_xy: np.ndarray) -> np.ndarray:
    """DLT homography obj plane -> image, with Hartley normalization."""

    def normalizer(pts):
        mean = pts.mean(axis=0)
        scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - mean, axis=1)), 1e-12)
        t = np.array([[scale, 0, -scale * mean[0]], [0, scale, -scale * mean[1]], [0, 0, 1]])
        return t

    t_obj = normalizer(obj_xy)
    t_img = normalizer(img_xy)
    obj_h = np.column_stack((obj_xy, np.ones(len(obj_xy)))) @ t_obj.T
    img_h = np.column_stack((img_xy, np.ones(len(img_xy)))) @ t_img.T

    n = len(obj_xy)
    a = np.zeros((2 * n, 9))
    a[0::2, 0:3] = -obj_h
    a[0::2, 6:9] = img_h[:, 0:1] * obj_h
    a[1::2, 3:6] = -obj_h
    a[1::2, 6:9] = img_h[:, 1:2] * obj_h
    # smallest right singular vector of a == eigenvector of a^T a (faster than full SVD)
    _, vecs = np.linalg.eigh(a.T @ a)
    h = vecs[:, 0].reshape(3, 3)
    return np.linalg.inv(t_img) @ h @ t_obj


def _pose_from_homography(h_norm: np.ndarray) -> RigidTransform:
    """Decompose a plane->normalized-image homography into a board pose.

    Of the two valid decompositions, keeps the one with the board origin in
    front of the camera (positive z in the camera frame).
    """
    h1, h2, h3 = h_norm[:, 0], h_norm[:, 1], h_norm[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if h3[2] * lam < 0:
        lam = -lam
    r1, r2, t = lam * h1, lam * h2, lam * h3
    rot_raw = np.column_stack((r1, r2, np.cross(r1, r2)))
    u, _, vt = np.linalg.svd(rot_raw)
    rot = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return RigidTransform(rot, t)


def estimate_camera_pose(
    board: FiducialBoard, det: TagDetections, intr: CameraIntrinsics
) -> PoseEstimate:
    """Estimate the world->camera pose from detected tag corners.

    Requires at least three detected tags (12 corner correspondences).
    Raises SolverDivergenceError when the refinement fails to converge
    within the fixed iteration budget.
    """
    used = [i for i in det.tag_ids if i in board.tags]
    unknown = [i for i in det.tag_ids if i not in board.tags]
    if unknown:
        raise ValueError(f"detections reference tags not on the board: {unknown}")
    if len(used) < MIN_TAGS:
        raise InsufficientTagsError(
            f"need >= {MIN_TAGS} detected tags, got {len(used)}"
        )

    obj = board.corners(used)                                 # (4n, 3), z = 0
    img = np.concatenate([det.tags[i] for i in used], axis=0)  # (4n, 2)

    # initialize from the planar homography in normalized coordinates
    img_norm = np.column_stack(
        (((img[:, 0] - intr.cx) / intr.fx), ((img[:, 1] - intr.cy) / intr.fy))
    )
    h = _homography_dlt(obj[:, :2], img_norm)
    pose0 = _pose_from_homography(h)

    # the optimization state is a raw (rotation, translation) pair; the
    # validated RigidTransform is built once from the converged solution.
    # camera-frame points are memoized because the solver evaluates the
    # jacobian at the state it just scored
    cache = {"state": None, "pts": None}

    def camera_points(state) -> np.ndarray:
        if cache["state"] is not state:
            rot, t = state
            cache["state"] = state
            cache["pts"] = obj @ rot.T + t
        return cache["pts"]

    def residual(state) -> np.ndarray:
        pts_c = camera_points(state)
        if np.any(pts_c[:, 2] <= 1e-9):
            return np.full(img.size, 1e6)  # reject steps putting the board behind the camera
        if intr.has_distortion:
            return (project_points(intr, pts_c) - img).ravel()
        uv = np.empty_like(img)
        uv[:, 0] = intr.fx * pts_c[:, 0] / pts_c[:, 2] + intr.cx
        uv[:, 1] = intr.fy * pts_c[:, 1] / pts_c[:, 2] + intr.cy
        return (uv - img).ravel()

    def update(state, delta: np.ndarray):
        rot, t = state
        return so3_exp(delta[:3]) @ rot, t + delta[3:]

    if intr.has_distortion:
        jacobian = _numeric_pose_jacobian(residual, update)
    else:
        def jacobian(state) -> np.ndarray:
            return _pinhole_pose_jacobian(intr, camera_points(state), state[1])

    result = levenberg_marquardt(
        residual, jacobian, (pose0.rotation, pose0.translation), update_fn=update
    )
    if not result.converged:
        raise SolverDivergenceError(
            f"pose refinement did not converge in {result.iterations} iterations "
            f"(residual {np.sqrt(result.cost):.3g})"
        )
    pose = RigidTransform(*result.x)
    # final cost is the sum of squared residual components == sum of squared
    # point errors, so the per-point RMSE follows directly
    rmse = float(np.sqrt(result.cost / len(obj)))
    return PoseEstimate(pose=pose, rmse=rmse, n_tags=len(used))


def _pinhole_pose_jacobian(intr: CameraIntrinsics, pts_c: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of pixel residuals wrt a local (rotation, translation) step.

    The local update is R <- exp(w) R, t <- t + dt, so d(p_c)/dw = -[p_c - t]x
    and d(p_c)/dt = I; rows alternate (u, v) per corner like the residual.
    """
    n = len(pts_c)
    x, y, z = pts_c[:, 0], pts_c[:, 1], pts_c[:, 2]
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    q = pts_c - t
    qx, qy, qz = q[:, 0], q[:, 1], q[:, 2]
    fx, fy = intr.fx, intr.fy

    jac = np.empty((2 * n, 6))
    ju, jv = jac[0::2], jac[1::2]
    ju[:, 0] = -fx * x * qy * inv_z2
    ju[:, 1] = fx * qz * inv_z + fx * x * qx * inv_z2
    ju[:, 2] = -fx * qy * inv_z
    ju[:, 3] = fx * inv_z
    ju[:, 4] = 0.0
    ju[:, 5] = -fx * x * inv_z2
    jv[:, 0] = -fy * qz * inv_z - fy * y * qy * inv_z2
    jv[:, 1] = fy * y * qx * inv_z2
    jv[:, 2] = fy * qx * inv_z
    jv[:, 3] = 0.0
    jv[:, 4] = fy * inv_z
    jv[:, 5] = -fy * y * inv_z2
    return jac


def _numeric_pose_jacobian(residual, update, eps: float = 1e-7):
    def jacobian(pose) -> np.ndarray:
        cols = []
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = eps
            rp = residual(update(pose, delta))
            rm = residual(update(pose, -delta))
            cols.append((rp - rm) / (2.0 * eps))
        return np.column_stack(cols)

    return jacobian


def trajectory_pose_stats(estimates: Sequence[PoseEstimate]) -> tuple[float, float, float]:
    """(mean rmse, std rmse, mean tag count) over a trajectory of estimates."""
    if not estimates:
        raise ValueError("empty trajectory")
    rmses = np.array([e.rmse for e in estimates])
    n_tags = np.array([e.n_tags for e in estimates])
    return float(rmses.mean()), float(rmses.std()), float(n_tags.mean())
