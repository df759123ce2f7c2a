"""Monte Carlo simulation of end-to-end 3D labeling error.

Each trial replays the full labeling chain on synthetic data: sample a
camera trajectory over the board, keep poses that see enough tags, pick
widely-separated views by farthest-point sampling, dither the projected
tag corners and re-estimate the camera poses, place a random keypoint in
the workspace, dither its projections like a human annotator would, and
triangulate.  The metric distance between the triangulated and true
keypoint is one error sample; the result is the RMSE over all trials.

Reprojection RMSE here (and everywhere in the toolkit) is per point:
sqrt(mean ||delta||^2) over 2D points.  Dithering to a target RMSE r
therefore draws per-component Gaussian noise with sigma = r / sqrt(2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .board import FiducialBoard, TagDetections, estimate_camera_pose
from .errors import DegenerateGeometryError
from .geometry import CameraIntrinsics, RigidTransform
from .labeling import fps_select_points, triangulate_keypoint

SENSOR_DEPTH_ERROR_M = 0.017  # time-of-flight depth camera random error


@dataclass(frozen=True)
class NoiseModel:
    """Reprojection-noise statistics (px) driving the simulation."""

    pose_corner_rmse: float = 1.21
    annotation_rmse_mean: float = 2.28
    annotation_rmse_std: float = 0.83

    def __post_init__(self):
        if min(self.pose_corner_rmse, self.annotation_rmse_mean, self.annotation_rmse_std) < 0:
            raise ValueError("noise statistics must be >= 0")


def default_capture_intrinsics() -> CameraIntrinsics:
    """Reference capture camera: 640x480, f = 400 px, so f*b = 48 px*m at b = 0.12 m."""
    return CameraIntrinsics(fx=400.0, fy=400.0, cx=320.0, cy=240.0, width=640, height=480)


@dataclass(frozen=True)
class CaptureGeometry:
    """Scan geometry: where cameras can be, board layout, camera model.

    Cameras sit on spherical shells around the board center and point at
    it.  The workspace box is where random keypoints are placed, centered
    laterally on the board and extending upward from its plane.
    """

    radius_range: tuple[float, float] = (0.45, 1.0)
    elevation_range_deg: tuple[float, float] = (30.0, 70.0)
    azimuth_range_deg: tuple[float, float] = (-60.0, 60.0)
    board: FiducialBoard = field(default_factory=FiducialBoard.border_layout)
    intrinsics: CameraIntrinsics = field(default_factory=default_capture_intrinsics)
    poses_per_scan: int = 200
    workspace: tuple[float, float, float] = (0.4, 0.4, 0.3)

    def __post_init__(self):
        if self.radius_range[0] <= 0 or self.radius_range[1] < self.radius_range[0]:
            raise ValueError(f"invalid radius range {self.radius_range}")
        for lo, hi in (self.elevation_range_deg, self.azimuth_range_deg):
            if hi < lo:
                raise ValueError("angle ranges must be non-empty")
        if self.poses_per_scan < 1:
            raise ValueError("poses_per_scan must be >= 1")


def dither_points(points: np.ndarray, rmse: float, rng: np.random.Generator) -> np.ndarray:
    """Add isotropic 2D Gaussian noise whose expected point RMSE equals ``rmse``."""
    points = np.asarray(points, dtype=float)
    return points + rng.normal(0.0, rmse / np.sqrt(2.0), size=points.shape)


def _batch_look_at(positions: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rotation matrices (N, 3, 3) of world->camera poses looking at ``target``."""
    fwd = target[None, :] - positions
    fwd = fwd / np.linalg.norm(fwd, axis=1, keepdims=True)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up[None, :])
    norms = np.linalg.norm(right, axis=1, keepdims=True)
    # poses looking straight down are excluded by elevation < 90 deg; guard anyway
    bad = norms[:, 0] < 1e-9
    if np.any(bad):
        right[bad] = np.cross(fwd[bad], np.array([0.0, 1.0, 0.0]))
        norms = np.linalg.norm(right, axis=1, keepdims=True)
    right = right / norms
    down = np.cross(fwd, right)
    return np.stack((right, down, fwd), axis=1)


def sample_trajectory(
    geom: CaptureGeometry, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n`` board-facing camera poses; returns (rotations, centers)."""
    r = rng.uniform(*geom.radius_range, size=n)
    elev = np.radians(rng.uniform(*geom.elevation_range_deg, size=n))
    azim = np.radians(rng.uniform(*geom.azimuth_range_deg, size=n))
    centers = np.column_stack(
        (
            r * np.cos(elev) * np.sin(azim),
            -r * np.cos(elev) * np.cos(azim),
            r * np.sin(elev),
        )
    )
    rotations = _batch_look_at(centers, np.zeros(3))
    return rotations, centers


def _visible_tag_mask(
    geom: CaptureGeometry, rotations: np.ndarray, centers: np.ndarray
) -> np.ndarray:
    """(N poses, T tags) bool: every corner of the tag is inside the image."""
    intr = geom.intrinsics
    corners = geom.board.corners()                      # (4T, 3)
    pts = rotations @ corners.T                          # (N, 3, 4T)
    pts -= (rotations @ centers[:, :, None])             # camera-frame coordinates
    z = pts[:, 2, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * pts[:, 0, :] / z + intr.cx
        v = intr.fy * pts[:, 1, :] / z + intr.cy
    ok = (z > 1e-6) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return ok.reshape(len(rotations), -1, 4).all(axis=2)


@dataclass
class SimulationResult:
    rmse_m: float
    errors: np.ndarray       # per-trial metric distance to ground truth (m)
    n_trials: int
    mean_visible_tags: float

    @property
    def rmse_mm(self) -> float:
        return self.rmse_m * 1000.0


def _trial_rngs(seed: int, trial: int) -> tuple[np.random.Generator, ...]:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trial,))
    return tuple(np.random.default_rng(child) for child in ss.spawn(3))


def simulate_labeling_error(
    geom: CaptureGeometry,
    noise: NoiseModel,
    n_views: tuple[int, int] = (4, 6),
    n_trials: int = 10_000,
    seed: int = 0,
) -> SimulationResult:
    """Estimate 3D keypoint labeling error by Monte Carlo.

    ``n_views`` is the inclusive range of annotated views per trial.  The
    RNG is counter-based per trial (independent streams derived from the
    master seed), so results are reproducible and trials are pairable
    across parameter changes.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    lo, hi = n_views
    if not 2 <= lo <= hi:
        raise ValueError(f"invalid view-count range {n_views}")

    board = geom.board
    tag_ids = board.tag_ids
    intr = geom.intrinsics
    errors = np.empty(n_trials)
    visible_counts = []

    for trial in range(n_trials):
        rng_scene, rng_pose_noise, rng_annot = _trial_rngs(seed, trial)

        rotations, centers = sample_trajectory(geom, geom.poses_per_scan, rng_scene)
        tag_mask = _visible_tag_mask(geom, rotations, centers)
        usable = np.flatnonzero(tag_mask.sum(axis=1) >= 3)
        n = int(rng_scene.integers(lo, hi + 1))
        if len(usable) < n:
            raise DegenerateGeometryError(
                f"trial {trial}: only {len(usable)} poses see >= 3 tags, need {n}"
            )
        sel = usable[fps_select_points(centers[usable], n)]
        span = np.ptp(centers[sel], axis=0)
        if np.max(span) < 1e-9:
            raise DegenerateGeometryError("selected viewpoints are coincident")
        visible_counts.append(tag_mask[sel].sum(axis=1).mean())

        # keypoint first so its draw is independent of the annotation-noise draws
        half_x, half_y, height = geom.workspace[0] / 2, geom.workspace[1] / 2, geom.workspace[2]
        keypoint = np.array(
            [
                rng_annot.uniform(-half_x, half_x),
                rng_annot.uniform(-half_y, half_y),
                rng_annot.uniform(0.0, height),
            ]
        )
        annot_rmse = -1.0
        while annot_rmse < 0.0:
            annot_rmse = rng_annot.normal(noise.annotation_rmse_mean, noise.annotation_rmse_std)

        views = []
        for i in sel:
            pose_true = RigidTransform(rotations[i], -rotations[i] @ centers[i])
            visible = [t for k, t in enumerate(tag_ids) if tag_mask[i, k]]
            pts_c = pose_true.apply(board.corners(visible))
            proj = np.column_stack(
                (
                    intr.fx * pts_c[:, 0] / pts_c[:, 2] + intr.cx,
                    intr.fy * pts_c[:, 1] / pts_c[:, 2] + intr.cy,
                )
            )
            proj = dither_points(proj, noise.pose_corner_rmse, rng_pose_noise)
            det = TagDetections(
                frame_id=f"sim-{i}",
                tags={t: proj[4 * k : 4 * k + 4] for k, t in enumerate(visible)},
            )
            est = estimate_camera_pose(board, det, intr)

            click = est.pose.apply(keypoint)
            click_uv = np.array(
                [
                    intr.fx * click[0] / click[2] + intr.cx,
                    intr.fy * click[1] / click[2] + intr.cy,
                ]
            )
            click_uv = dither_points(click_uv, annot_rmse, rng_annot)
            views.append((est, intr, (click_uv[0], click_uv[1])))

        estimate = triangulate_keypoint(views)
        errors[trial] = np.linalg.norm(estimate.position - keypoint)

    return SimulationResult(
        rmse_m=float(np.sqrt(np.mean(errors**2))),
        errors=errors,
        n_trials=n_trials,
        mean_visible_tags=float(np.mean(visible_counts)),
    )


def compare_to_sensor(rmse_m: float) -> float:
    """How many times more accurate the labeling is than a depth sensor."""
    if rmse_m <= 0:
        raise ValueError("rmse must be positive")
    return SENSOR_DEPTH_ERROR_M / rmse_m
