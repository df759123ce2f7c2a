"""Command-line interface: a thin layer over the library and session store.

Exit codes: 0 success, 1 usage error, 2 data error, 3 QA rejection.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import QaRejectionError, StereoLabelError
from .sessions import (
    KEYPOINTS,
    LABELS,
    POSES,
    QA,
    SCHEMA_VERSION,
    ScanSession,
    _keypoints_doc,
    _labels_doc,
    _qa_doc,
    atomic_write,
    canonical_json,
    estimate_poses_stage,
    intrinsics_from_dict,
    list_sessions,
    load_session,
    pose_to_dict,
    propagate_stage,
    rig_from_dict,
    run_pipeline,
    select_stage,
    session_lock,
    sym_from_list,
    transform_from_dict,
    triangulate_stage,
)
from .board import trajectory_pose_stats
from .labeling import qa_gate


def _load_session_arg(ctx) -> ScanSession:
    path = ctx.obj.get("session")
    if not path:
        raise click.UsageError("--session is required for this command")
    return load_session(path)


def _write_out(ctx, doc: dict, default_name: str) -> Path:
    out = ctx.obj.get("out")
    path = Path(out) if out else Path(default_name)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(doc), encoding="utf-8")
    return path


def _read_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


@click.group()
@click.option("--session", type=click.Path(), help="session directory (sessions root for `serve`)")
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON config file")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), help="output file or directory")
@click.pass_context
def cli(ctx, session, config_path, seed, out):
    """Multi-view stereo scan labeling toolkit."""
    ctx.obj = {
        "session": session,
        "config": _read_json(config_path) if config_path else {},
        "seed": seed,
        "out": out,
    }


@cli.command()
@click.pass_context
def poses(ctx):
    """Estimate per-frame board poses from stored detections."""
    session = _load_session_arg(ctx)
    session.poses = estimate_poses_stage(session)
    with session_lock(session.root):
        atomic_write(
            session.root / POSES,
            canonical_json({
                "schema_version": SCHEMA_VERSION,
                "poses": {fid: pose_to_dict(p) for fid, p in sorted(session.poses.items())},
            }),
        )
    mean_rmse, std_rmse, mean_tags = trajectory_pose_stats(list(session.poses.values()))
    click.echo(
        f"estimated {len(session.poses)} poses: rmse {mean_rmse:.3f} +/- {std_rmse:.3f} px, "
        f"mean tags {mean_tags:.1f}"
    )


@cli.command()
@click.option("-k", type=int, default=None, help="number of keyframes (defaults to the session setting)")
@click.pass_context
def select(ctx, k):
    """Pick annotation keyframes by farthest-point sampling."""
    session = _load_session_arg(ctx)
    if not session.poses:
        session.poses = estimate_poses_stage(session)
    if k is not None:
        session.keyframes = k
    selected = select_stage(session)
    click.echo(" ".join(selected))


@cli.command()
@click.pass_context
def triangulate(ctx):
    """Triangulate 3D keypoints from stored annotations."""
    session = _load_session_arg(ctx)
    if not session.poses:
        session.poses = estimate_poses_stage(session)
    session.keypoints = triangulate_stage(session)
    session.selected_frames = select_stage(session)
    with session_lock(session.root):
        atomic_write(session.root / KEYPOINTS, canonical_json(_keypoints_doc(session)))
    for kp in session.keypoints:
        click.echo(
            f"keypoint {kp.keypoint_id}: ({kp.position[0]:.4f}, {kp.position[1]:.4f}, "
            f"{kp.position[2]:.4f}) m, rmse {kp.rmse:.3f} px over {kp.n_views} views"
        )


@cli.command()
@click.pass_context
def propagate(ctx):
    """Project triangulated keypoints into every posed frame."""
    session = _load_session_arg(ctx)
    if not session.keypoints:
        raise StereoLabelError("no triangulated keypoints; run `triangulate` first")
    if not session.poses:
        session.poses = estimate_poses_stage(session)
    session.labels = propagate_stage(session)
    with session_lock(session.root):
        atomic_write(session.root / LABELS, canonical_json(_labels_doc(session)))
    flagged = sum(1 for fl in session.labels.values() if fl.flagged)
    click.echo(f"propagated labels to {len(session.labels)} frames ({flagged} flagged)")


@cli.command()
@click.pass_context
def qa(ctx):
    """Apply the QA gate to the triangulated keypoints."""
    session = _load_session_arg(ctx)
    if not session.keypoints:
        raise StereoLabelError("no triangulated keypoints; run `triangulate` first")
    verdict = qa_gate(session.keypoints, session.qa_threshold_px)
    session.qa = verdict
    with session_lock(session.root):
        atomic_write(session.root / QA, canonical_json(_qa_doc(verdict)))
    if verdict.accepted:
        click.echo(f"accept (worst keypoint {verdict.worst_keypoint_id}: {verdict.worst_rmse:.3f} px)")
    else:
        click.echo(
            f"reject: keypoint {verdict.worst_keypoint_id} rmse {verdict.worst_rmse:.3f} px "
            f"> {verdict.threshold_px} px"
        )
        raise QaRejectionError(
            f"keypoint {verdict.worst_keypoint_id} rmse {verdict.worst_rmse:.3f} px"
        )


@cli.command()
@click.pass_context
def pipeline(ctx):
    """Run poses, selection, triangulation, propagation and QA end to end."""
    session = _load_session_arg(ctx)
    session = run_pipeline(session, persist=True)
    verdict = session.qa
    status = "accept" if verdict.accepted else "reject"
    click.echo(
        f"{status}: {len(session.keypoints)} keypoints, worst rmse {verdict.worst_rmse:.3f} px "
        f"(threshold {verdict.threshold_px} px), labels on {len(session.labels)} frames"
    )
    if not verdict.accepted:
        raise QaRejectionError(
            f"keypoint {verdict.worst_keypoint_id} rmse {verdict.worst_rmse:.3f} px"
        )


@cli.command("warp-depth")
@click.option("--depth", "depth_path", required=True, type=click.Path(exists=True), help="16-bit mm depth PNG")
@click.option("--depth-intrinsics", required=True, type=click.Path(exists=True))
@click.option("--rgb-pose", required=True, type=click.Path(exists=True), help="world->rgb-camera pose JSON")
@click.option("--left-poses", required=True, type=click.Path(exists=True), help="candidate world->left poses JSON")
@click.option("--extrinsic", required=True, type=click.Path(exists=True), help="depth->rgb factory extrinsic JSON")
@click.option("--target-intrinsics", required=True, type=click.Path(exists=True))
@click.pass_context
def warp_depth_cmd(ctx, depth_path, depth_intrinsics, rgb_pose, left_poses, extrinsic, target_intrinsics):
    """Register a depth image to the nearest left-stereo viewpoint."""
    from .depth_warp import chain_to_left, load_depth_png, nearest_view, save_depth_png, undistort_depth, warp_depth

    depth_intr = intrinsics_from_dict(_read_json(depth_intrinsics), "depth-intrinsics")
    t_rgb_world = transform_from_dict(_read_json(rgb_pose), "rgb-pose")
    t_rgb_depth = transform_from_dict(_read_json(extrinsic), "extrinsic")
    target = intrinsics_from_dict(_read_json(target_intrinsics), "target-intrinsics")

    poses_doc = _read_json(left_poses)["poses"]
    frame_ids = sorted(poses_doc)
    candidates = [transform_from_dict(poses_doc[fid], f"left-poses.{fid}") for fid in frame_ids]

    img = undistort_depth(load_depth_png(depth_path, depth_intr))
    t_depth_world = t_rgb_depth.invert().compose(t_rgb_world)
    idx = nearest_view(t_depth_world, candidates)
    chain = chain_to_left(candidates[idx], t_rgb_world, t_rgb_depth)
    out = warp_depth(img, chain, target)

    out_path = Path(ctx.obj.get("out") or "depth_warped.png")
    save_depth_png(out, out_path)
    click.echo(f"warped into view {frame_ids[idx]!r} -> {out_path}")


@cli.command()
@click.option("--left", "left_path", required=True, type=click.Path(exists=True))
@click.option("--right", "right_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True),
              help='JSON {"bbox_center": [u, v], "labels": [[u, v, d], ...]}')
@click.option("--mirror", is_flag=True, help="apply stereo mirroring")
@click.option("--rotate", type=float, default=None, help="X-axis rotation in degrees (random if omitted)")
@click.option("--no-photometric", is_flag=True)
@click.pass_context
def augment(ctx, left_path, right_path, labels_path, mirror, rotate, no_photometric):
    """Crop a stereo sample and apply epipolar-preserving augmentation."""
    from PIL import Image

    from .augment import PhotometricParams, crop_stereo, mirror_stereo, photometric_augment, rotate_about_x
    from .geometry import CameraIntrinsics, UVD

    rng = np.random.default_rng(ctx.obj["seed"])
    doc = _read_json(labels_path)
    labels = tuple(UVD(*row) for row in doc.get("labels", []))
    left = np.asarray(Image.open(left_path).convert("RGB"), dtype=float) / 255.0
    right = np.asarray(Image.open(right_path).convert("RGB"), dtype=float) / 255.0

    h, w = left.shape[:2]
    intr_doc = doc.get("intrinsics")
    intr = (
        intrinsics_from_dict(intr_doc, "labels.intrinsics")
        if intr_doc
        else CameraIntrinsics(fx=400.0, fy=400.0, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)
    )

    crop = crop_stereo(left, right, tuple(doc["bbox_center"]), labels, rng=rng)
    if mirror:
        crop = mirror_stereo(crop)
    angle = rotate if rotate is not None else float(rng.uniform(-5.0, 5.0))
    crop = rotate_about_x(crop, intr, angle)

    out_dir = Path(ctx.obj.get("out") or "augmented")
    out_dir.mkdir(parents=True, exist_ok=True)
    params = PhotometricParams(**ctx.obj["config"].get("photometric", {}))
    for name, patch in (("left", crop.left), ("right", crop.right)):
        if no_photometric:
            normalized = patch
        else:
            normalized = photometric_augment(np.clip(patch, 0.0, 1.0), params, rng)
        np.save(out_dir / f"{name}.npy", normalized)
        Image.fromarray((np.clip(patch, 0, 1) * 255).astype(np.uint8)).save(out_dir / f"{name}.png")
    (out_dir / "labels.json").write_text(
        canonical_json(
            {
                "schema_version": SCHEMA_VERSION,
                "origin": list(crop.origin),
                "right_offset": crop.right_offset,
                "rotation_deg": angle,
                "mirrored": bool(mirror),
                "labels": [[l.u, l.v, l.d] for l in crop.labels],
            }
        ),
        encoding="utf-8",
    )
    click.echo(f"wrote augmented crop to {out_dir}")


@cli.command("simulate-error")
@click.option("--trials", type=int, default=10_000, show_default=True)
@click.option("--views", nargs=2, type=int, default=(4, 6), show_default=True)
@click.option("--samples", "samples_path", type=click.Path(), help="optional per-trial error file")
@click.pass_context
def simulate_error(ctx, trials, views, samples_path):
    """Monte Carlo estimate of the end-to-end 3D labeling error."""
    from .simulate import CaptureGeometry, NoiseModel, compare_to_sensor, simulate_labeling_error

    cfg = ctx.obj["config"]
    noise = NoiseModel(**cfg.get("noise", {}))
    geom_cfg = cfg.get("geometry", {})
    geom = CaptureGeometry(**{k: tuple(v) if isinstance(v, list) else v for k, v in geom_cfg.items()})
    result = simulate_labeling_error(
        geom, noise, n_views=tuple(views), n_trials=trials, seed=ctx.obj["seed"]
    )
    summary = {
        "schema_version": SCHEMA_VERSION,
        "rmse_mm": result.rmse_mm,
        "n_trials": result.n_trials,
        "n_views": list(views),
        "seed": ctx.obj["seed"],
        "mean_visible_tags": result.mean_visible_tags,
        "sensor_ratio": compare_to_sensor(result.rmse_m),
        "noise": {
            "pose_corner_rmse": noise.pose_corner_rmse,
            "annotation_rmse_mean": noise.annotation_rmse_mean,
            "annotation_rmse_std": noise.annotation_rmse_std,
        },
        "poses_per_scan": geom.poses_per_scan,
    }
    path = _write_out(ctx, summary, "simulation.json")
    if samples_path:
        Path(samples_path).write_text(
            canonical_json({"schema_version": SCHEMA_VERSION, "errors_m": result.errors.tolist()}),
            encoding="utf-8",
        )
    click.echo(
        f"rmse {result.rmse_mm:.2f} mm over {trials} trials "
        f"({summary['sensor_ratio']:.1f}x better than the depth sensor) -> {path}"
    )


@cli.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--curve", "curve_path", type=click.Path(), help="optional cumulative-curve samples file")
@click.pass_context
def eval_cmd(ctx, pred_path, labels_path, curve_path):
    """Score UVD predictions against labels (AUC, <2cm, MAE)."""
    from .metrics import config_hash, precision_curve, sample_errors, summarize

    pred_doc = _read_json(pred_path)
    label_doc = _read_json(labels_path)
    rig = rig_from_dict(label_doc["rig"], "labels.rig")
    n_kp = len(label_doc["samples"][0]["uvd"])
    sym = sym_from_list(label_doc.get("symmetry", [list(range(1, n_kp + 1))]), n_kp)

    labels_by_id = {s["id"]: np.asarray(s["uvd"], dtype=float) for s in label_doc["samples"]}
    records = []
    for sample in pred_doc["samples"]:
        sid = sample["id"]
        if sid not in labels_by_id:
            raise StereoLabelError(f"prediction {sid!r} has no matching label")
        records.append(
            sample_errors(np.asarray(sample["uvd"], dtype=float), labels_by_id[sid], rig, sym)
        )
    cfg_hash = config_hash({"rig": label_doc["rig"], "symmetry": label_doc.get("symmetry")})
    metrics = summarize(records, cfg_hash)
    doc = {"schema_version": SCHEMA_VERSION, **metrics.to_dict()}
    path = _write_out(ctx, doc, "metrics.json")
    if curve_path:
        xs, ys = precision_curve(records)
        Path(curve_path).write_text(
            canonical_json(
                {"schema_version": SCHEMA_VERSION, "threshold_m": xs.tolist(), "cumulative_pct": ys.tolist()}
            ),
            encoding="utf-8",
        )
    click.echo(
        f"auc {metrics.auc:.1f}  <2cm {metrics.pct_2cm:.1f}%  mae {metrics.mae_mm:.1f} mm "
        f"({metrics.count} keypoints) -> {path}"
    )


@cli.command("fit-pose")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--observed", "observed_path", required=True, type=click.Path(exists=True))
@click.pass_context
def fit_pose(ctx, model_path, observed_path):
    """Recover rigid 6D poses aligning model keypoints to observations."""
    from .losses import SymmetrySpec
    from .pose_fit import KeypointModel, procrustes_align

    model_doc = _read_json(model_path)
    points = np.asarray(model_doc["points"], dtype=float)
    sym = sym_from_list(
        model_doc.get("symmetry", [list(range(1, len(points) + 1))]), len(points), "model.symmetry"
    )
    model = KeypointModel(points=points, sym=sym)

    poses_out = []
    for sample in _read_json(observed_path)["samples"]:
        res = procrustes_align(model, np.asarray(sample["xyz"], dtype=float))
        poses_out.append(
            {
                "id": sample["id"],
                "rotation": res.transform.rotation.tolist(),
                "translation": res.transform.translation.tolist(),
                "rmsd_m": res.rmsd_m,
                "permutation": [i + 1 for i in res.permutation],
                "degenerate": res.degenerate,
            }
        )
    path = _write_out(ctx, {"schema_version": SCHEMA_VERSION, "poses": poses_out}, "poses_fit.json")
    click.echo(f"fitted {len(poses_out)} poses -> {path}")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(), default=None,
              help="static annotator bundle to host at / (default: ./frontend/dist if present)")
@click.pass_context
def serve(ctx, host, port, ui_dir):
    """Run the annotation session service over a sessions root directory."""
    import uvicorn

    from .service import create_app

    root = ctx.obj.get("session")
    if not root:
        raise click.UsageError("--session must point at the sessions root directory")
    if ui_dir is None and Path("frontend/dist").exists():
        ui_dir = "frontend/dist"
    app = create_app(root, ui_dir=ui_dir)
    sessions = list_sessions(root)
    click.echo(f"serving {len(sessions)} session(s) from {root} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> None:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as e:
        sys.exit(e.exit_code)
    except click.UsageError as e:
        e.show()
        sys.exit(1)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except QaRejectionError:
        sys.exit(3)
    except (StereoLabelError, OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
