"""Synthetic scan sessions with known ground truth.

Renders a simple but honest scene: the fiducial board's tags drawn as
filled quads and the object keypoints as colored dots, projected through
the exact camera model.  Detections come from the true corner projections
(optionally dithered), so the whole labeling pipeline can be exercised and
checked against the generator's ground truth.  Also used to build the demo
session that the annotation frontend drives.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .board import FiducialBoard, TagDetections
from .geometry import RigidTransform, StereoRig, project_points
from .labeling import Annotation2D
from .losses import SymmetrySpec
from .sessions import FrameRecord, ScanSession, save_session
from .simulate import CaptureGeometry, NoiseModel, dither_points, sample_trajectory, _visible_tag_mask

KEYPOINT_COLORS = [
    (220, 40, 40), (230, 200, 30), (40, 180, 60), (50, 90, 230), (170, 60, 200),
]

# tree-style object: trunk bottom/top plus two symmetric side branches
DEFAULT_KEYPOINTS = np.array(
    [
        [0.0, 0.0, 0.02],
        [0.0, 0.0, 0.16],
        [-0.06, 0.0, 0.10],
        [0.06, 0.0, 0.10],
    ]
)


@dataclass
class SyntheticTruth:
    """Generator-side ground truth for checking pipeline output."""

    keypoints: np.ndarray                 # (N, 3) world positions
    poses: dict[str, RigidTransform]      # true world->left-camera poses
    labels: dict[str, np.ndarray]         # true per-frame (N, 3) UVD


def _render_frame(
    session_rig: StereoRig,
    board: FiducialBoard,
    pose: RigidTransform,
    keypoints: np.ndarray,
    baseline_shift: float,
) -> Image.Image:
    intr = session_rig.left
    img = Image.new("RGB", (intr.width, intr.height), (235, 235, 228))
    draw = ImageDraw.Draw(img)
    shift = np.array([baseline_shift, 0.0, 0.0])

    for tag_id in board.tag_ids:
        pts_c = pose.apply(board.tags[tag_id]) - shift
        if np.any(pts_c[:, 2] <= 0):
            continue
        uv = project_points(intr, pts_c)
        draw.polygon([tuple(p) for p in uv], fill=(25, 25, 25))
        draw.point(tuple(uv[0]), fill=(90, 90, 90))  # mark corner 0 for orientation

    for i, kp in enumerate(keypoints):
        p_c = pose.apply(kp) - shift
        if p_c[2] <= 0:
            continue
        u, v = project_points(intr, p_c)[0]
        r = 3.0
        color = KEYPOINT_COLORS[i % len(KEYPOINT_COLORS)]
        draw.ellipse([u - r, v - r, u + r, v + r], fill=color)
    return img


def make_session(
    root: str | Path,
    session_id: str = "synthetic",
    n_frames: int = 20,
    seed: int = 0,
    noise: NoiseModel | None = None,
    keypoints: np.ndarray | None = None,
    sym: SymmetrySpec | None = None,
    annotate: bool = True,
    render: bool = True,
    geometry: CaptureGeometry | None = None,
) -> tuple[ScanSession, SyntheticTruth]:
    """Generate a full session directory plus its ground truth.

    With ``noise=None`` detections and annotations are exact projections,
    so the pipeline must reproduce the generator to numerical precision.
    ``annotate=False`` leaves the session ready for a human (or scripted)
    annotator.  Rendering can be disabled for speed; tiny placeholder
    images are then written so the directory still validates.
    """
    rng = np.random.default_rng(seed)
    geom = geometry or CaptureGeometry()
    noise = noise or NoiseModel(0.0, 0.0, 0.0)
    keypoints = DEFAULT_KEYPOINTS.copy() if keypoints is None else np.asarray(keypoints, dtype=float)
    n_kp = len(keypoints)
    if sym is None:
        sym = SymmetrySpec.with_swaps(4, (2, 3)) if n_kp == 4 else SymmetrySpec.identity(n_kp)
    rig = StereoRig(left=geom.intrinsics, baseline=0.12)

    # oversample the trajectory, keep poses that see at least 3 full tags
    rotations, centers = sample_trajectory(geom, max(4 * n_frames, 40), rng)
    mask = _visible_tag_mask(geom, rotations, centers)
    usable = np.flatnonzero(mask.sum(axis=1) >= 3)[:n_frames]
    if len(usable) < n_frames:
        raise ValueError(f"only {len(usable)} usable poses sampled, wanted {n_frames}")

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)

    frames: list[FrameRecord] = []
    detections: dict[str, TagDetections] = {}
    truth_poses: dict[str, RigidTransform] = {}
    truth_labels: dict[str, np.ndarray] = {}
    tag_ids = geom.board.tag_ids

    for n, i in enumerate(usable):
        fid = f"{n:03d}"
        pose = RigidTransform(rotations[i], -rotations[i] @ centers[i])
        truth_poses[fid] = pose

        visible = [t for k, t in enumerate(tag_ids) if mask[i, k]]
        proj = project_points(rig.left, pose.apply(geom.board.corners(visible)))
        proj = dither_points(proj, noise.pose_corner_rmse, rng)
        detections[fid] = TagDetections(
            frame_id=fid, tags={t: proj[4 * k : 4 * k + 4] for k, t in enumerate(visible)}
        )

        pts_c = pose.apply(keypoints)
        uv = project_points(rig.left, pts_c)
        d = rig.left.fx * rig.baseline / pts_c[:, 2]
        truth_labels[fid] = np.column_stack((uv, d))

        left_ref, right_ref = f"images/{fid}_left.png", f"images/{fid}_right.png"
        if render:
            _render_frame(rig, geom.board, pose, keypoints, 0.0).save(root / left_ref)
            _render_frame(rig, geom.board, pose, keypoints, rig.baseline).save(root / right_ref)
        else:
            Image.new("RGB", (8, 8), (200, 200, 200)).save(root / left_ref)
            Image.new("RGB", (8, 8), (200, 200, 200)).save(root / right_ref)
        frames.append(FrameRecord(frame_id=fid, left=left_ref, right=right_ref))

    session = ScanSession(
        session_id=session_id, rig=rig, board=geom.board, sym=sym,
        frames=frames, detections=detections, root=root,
    )

    if annotate:
        # annotate the keyframe selection like a careful human would
        from .labeling import fps_select

        posed_ids = [f.frame_id for f in frames]
        idx = fps_select([truth_poses[fid] for fid in posed_ids], min(6, len(posed_ids)))
        annotations = []
        for j in idx:
            fid = posed_ids[j]
            uv = truth_labels[fid][:, :2]
            uv = dither_points(uv, _draw_annotation_rmse(noise, rng), rng)
            for kp_id in range(1, n_kp + 1):
                u, v = uv[kp_id - 1]
                if 0 <= u < rig.left.width and 0 <= v < rig.left.height:
                    annotations.append(Annotation2D(frame_id=fid, keypoint_id=kp_id, u=float(u), v=float(v)))
        session.annotations = annotations

    save_session(session, root)
    truth = SyntheticTruth(keypoints=keypoints, poses=truth_poses, labels=truth_labels)
    # hand back the canonical on-disk form (floats rounded to the file
    # precision) so pipeline runs are reproducible byte for byte
    from .sessions import load_session

    return load_session(root), truth


def _draw_annotation_rmse(noise: NoiseModel, rng: np.random.Generator) -> float:
    if noise.annotation_rmse_mean == 0 and noise.annotation_rmse_std == 0:
        return 0.0
    r = -1.0
    while r < 0:
        r = rng.normal(noise.annotation_rmse_mean, noise.annotation_rmse_std)
    return r


def main(argv=None) -> None:
    import argparse

    parser = argparse.ArgumentParser(description="generate a synthetic demo session")
    parser.add_argument("out", help="session directory to create")
    parser.add_argument("--frames", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--annotate", action="store_true", help="include synthetic annotations")
    args = parser.parse_args(argv)
    session, _ = make_session(
        Path(args.out), session_id=Path(args.out).name,
        n_frames=args.frames, seed=args.seed, annotate=args.annotate,
    )
    print(f"wrote session {session.session_id!r} with {len(session.frames)} frames to {args.out}")


if __name__ == "__main__":
    main()
