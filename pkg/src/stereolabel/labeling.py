"""Keyframe selection, keypoint triangulation, propagation and QA gating.

The flow mirrors the capture pipeline: pick a handful of widely-separated
camera poses, have a human click each keypoint in those views, triangulate
the clicks into 3D points in the world/board frame, reproject the points
into every frame to generate per-frame UVD labels, and reject the scan if
any keypoint reprojects worse than the QA threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .board import PoseEstimate, pixel_rmse
from .errors import DegenerateRaysError, InsufficientViewsError, SolverDivergenceError
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    StereoRig,
    UVD,
    XYZ,
    camera_center,
    project_points,
    xyz_to_uvd,
)
from .optim import levenberg_marquardt

DEFAULT_KEYFRAMES = 6
QA_THRESHOLD_PX = 5.0
MIN_RAY_ANGLE_DEG = 0.1


@dataclass(frozen=True)
class Annotation2D:
    frame_id: str
    keypoint_id: int
    u: float
    v: float


@dataclass(frozen=True)
class Keypoint3D:
    keypoint_id: int
    position: np.ndarray  # (3,) in the world/board frame, meters
    rmse: float           # reprojection RMSE over the annotated views (px)
    n_views: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        if self.n_views < 2:
            raise ValueError("a triangulated keypoint needs >= 2 views")
        if self.rmse < 0:
            raise ValueError("rmse must be >= 0")


def fps_select_points(points: np.ndarray, k: int) -> list[int]:
    """Greedy farthest-point sampling over (N, 3) positions.

    The seed is the point farthest from the centroid; each subsequent pick
    maximizes the minimum distance to the already-selected set.  Ties
    resolve to the lowest index, so the result is deterministic and
    ``fps_select_points(p, k)`` is a prefix of ``fps_select_points(p, k+1)``.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    centroid = points.mean(axis=0)
    # np.argmax returns the first (lowest-index) maximizer
    selected = [int(np.argmax(np.linalg.norm(points - centroid, axis=1)))]
    min_dist = np.linalg.norm(points - points[selected[0]], axis=1)
    while len(selected) < k:
        pick = int(np.argmax(min_dist))
        selected.append(pick)
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[pick], axis=1))
    return selected


def fps_select(poses: Sequence[RigidTransform], k: int) -> list[int]:
    """Farthest-point sampling of camera poses by their center positions."""
    return fps_select_points(np.stack([camera_center(p) for p in poses]), k)


def _ray_directions(views) -> np.ndarray:
    dirs = []
    for pose_est, intr, uv in views:
        rot = pose_est.pose.rotation
        ray_cam = np.array([(uv[0] - intr.cx) / intr.fx, (uv[1] - intr.cy) / intr.fy, 1.0])
        d = rot.T @ ray_cam
        dirs.append(d / np.linalg.norm(d))
    return np.stack(dirs)


def _dlt_two_view(views, i: int, j: int) -> np.ndarray:
    """Linear triangulation from two views (homogeneous DLT)."""
    rows = []
    for idx in (i, j):
        pose_est, intr, uv = views[idx]
        p = intr.matrix() @ pose_est.pose.matrix()[:3, :]
        rows.append(uv[0] * p[2] - p[0])
        rows.append(uv[1] * p[2] - p[1])
    _, _, vt = np.linalg.svd(np.stack(rows))
    x_h = vt[-1]
    if abs(x_h[3]) < 1e-15:
        raise DegenerateRaysError("linear triangulation produced a point at infinity")
    return x_h[:3] / x_h[3]


def triangulate_keypoint(
    views: Sequence[tuple[PoseEstimate, CameraIntrinsics, tuple[float, float]]],
    keypoint_id: int = 0,
) -> Keypoint3D:
    """Triangulate one keypoint from 2D annotations in posed views.

    Minimizes the total squared reprojection error over all views,
    initialized by linear triangulation from the two views with the widest
    ray angle.  Raises InsufficientViewsError for < 2 views and
    DegenerateRaysError when every ray pair is closer than 0.1 degrees.
    """
    if len(views) < 2:
        raise InsufficientViewsError(f"need >= 2 views, got {len(views)}")
    views = [(pe, intr, np.asarray(uv, dtype=float).reshape(2)) for pe, intr, uv in views]

    dirs = _ray_directions(views)
    best_pair, best_angle = (0, 1), -1.0
    for i in range(len(views)):
        for j in range(i + 1, len(views)):
            angle = np.degrees(np.arccos(np.clip(abs(dirs[i] @ dirs[j]), -1.0, 1.0)))
            if angle > best_angle:
                best_pair, best_angle = (i, j), angle
    if best_angle < MIN_RAY_ANGLE_DEG:
        raise DegenerateRaysError(
            f"widest ray angle {best_angle:.4f} deg is below {MIN_RAY_ANGLE_DEG} deg"
        )

    x0 = _dlt_two_view(views, *best_pair)

    # batched view parameters; intrinsics may differ per view
    rots = np.stack([pe.pose.rotation for pe, _, _ in views])
    trans = np.stack([pe.pose.translation for pe, _, _ in views])
    fx = np.array([intr.fx for _, intr, _ in views])
    fy = np.array([intr.fy for _, intr, _ in views])
    cx = np.array([intr.cx for _, intr, _ in views])
    cy = np.array([intr.cy for _, intr, _ in views])
    distorted = [intr for _, intr, _ in views if intr.has_distortion]
    uvs = np.stack([uv for _, _, uv in views])

    def camera_points(x: np.ndarray) -> np.ndarray:
        return rots @ x + trans

    def residual(x: np.ndarray) -> np.ndarray:
        pts_c = camera_points(x)
        z = pts_c[:, 2]
        if np.any(z <= 1e-9):
            return np.full(2 * len(views), 1e6)
        if distorted:
            uv = np.stack(
                [project_points(intr, p)[0] for (_, intr, _), p in zip(views, pts_c)]
            )
        else:
            uv = np.column_stack((fx * pts_c[:, 0] / z + cx, fy * pts_c[:, 1] / z + cy))
        return (uv - uvs).ravel()

    if distorted:
        def jacobian(x: np.ndarray) -> np.ndarray:
            eps = 1e-7
            cols = []
            for k in range(3):
                d = np.zeros(3)
                d[k] = eps
                cols.append((residual(x + d) - residual(x - d)) / (2.0 * eps))
            return np.column_stack(cols)
    else:
        def jacobian(x: np.ndarray) -> np.ndarray:
            pts_c = camera_points(x)
            z = pts_c[:, 2]
            a = np.zeros((len(views), 2, 3))
            a[:, 0, 0] = fx / z
            a[:, 0, 2] = -fx * pts_c[:, 0] / (z * z)
            a[:, 1, 1] = fy / z
            a[:, 1, 2] = -fy * pts_c[:, 1] / (z * z)
            return (a @ rots).reshape(2 * len(views), 3)

    result = levenberg_marquardt(residual, jacobian, x0)
    if not result.converged:
        raise SolverDivergenceError(
            f"triangulation did not converge in {result.iterations} iterations"
        )
    rmse = float(np.sqrt(result.cost / len(views)))
    return Keypoint3D(
        keypoint_id=keypoint_id, position=result.x, rmse=rmse, n_views=len(views)
    )


@dataclass(frozen=True)
class FrameLabels:
    """Propagated per-frame UVD labels, aligned with the keypoint list.

    ``labels[i]`` is None when keypoint i sits behind the camera in this
    frame; any such keypoint sets ``flagged`` instead of dropping the frame.
    """

    labels: tuple
    flagged: bool


def propagate_labels(
    kps: Sequence[Keypoint3D], frames: Sequence[tuple[PoseEstimate, StereoRig]]
) -> list[FrameLabels]:
    """Project triangulated keypoints into every frame as UVD labels."""
    out = []
    for pose_est, rig in frames:
        labels: list[UVD | None] = []
        flagged = False
        for kp in kps:
            p_c = pose_est.pose.apply(kp.position)
            if p_c[2] <= 0:
                labels.append(None)
                flagged = True
                continue
            labels.append(xyz_to_uvd(rig, XYZ(p_c[0], p_c[1], p_c[2])))
        out.append(FrameLabels(labels=tuple(labels), flagged=flagged))
    return out


@dataclass(frozen=True)
class QaResult:
    accepted: bool
    worst_keypoint_id: int
    worst_rmse: float
    threshold_px: float


def qa_gate(kps: Sequence[Keypoint3D], threshold_px: float = QA_THRESHOLD_PX) -> QaResult:
    """Reject a scan iff any keypoint reprojection RMSE strictly exceeds the threshold."""
    if not kps:
        raise ValueError("qa_gate needs at least one keypoint")
    worst = max(kps, key=lambda kp: kp.rmse)
    return QaResult(
        accepted=worst.rmse <= threshold_px,
        worst_keypoint_id=worst.keypoint_id,
        worst_rmse=worst.rmse,
        threshold_px=threshold_px,
    )
