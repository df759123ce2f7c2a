"""Acceptance suite: one test per criterion, tolerances pinned.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL
line per criterion.
"""

import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from stereolabel.geometry import (
    CameraIntrinsics,
    RigidTransform,
    StereoRig,
    UVD,
    XYZ,
    depth_sensitivity,
    project,
    rotation_angle,
    so3_exp,
    uvd_to_xyz,
)

INTR = CameraIntrinsics(fx=400.0, fy=400.0, cx=320.0, cy=240.0, width=640, height=480)
RIG = StereoRig(left=INTR, baseline=0.12)


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {number:2d} FAIL  {description}")
        raise
    print(f"ACCEPTANCE {number:2d} PASS  {description}")


class TestAcceptance:
    def test_01_monte_carlo_labeling_error(self):
        from stereolabel.simulate import (
            CaptureGeometry,
            NoiseModel,
            compare_to_sensor,
            simulate_labeling_error,
        )

        with criterion(1, "Monte Carlo labeling error in [2.4, 4.4] mm, < 60 s, sensor ratio >= 5"):
            start = time.perf_counter()
            result = simulate_labeling_error(
                CaptureGeometry(),
                NoiseModel(pose_corner_rmse=1.21, annotation_rmse_mean=2.28, annotation_rmse_std=0.83),
                n_views=(4, 6),
                n_trials=10_000,
                seed=20260809,
            )
            elapsed = time.perf_counter() - start
            assert 2.4 <= result.rmse_mm <= 4.4, f"rmse {result.rmse_mm:.2f} mm outside band"
            assert elapsed < 60.0, f"took {elapsed:.1f} s"
            assert compare_to_sensor(0.0034) >= 5.0

    def test_02_disparity_sensitivity(self):
        with criterion(2, "0.41 px disparity error at z=0.8 m -> 5.47 mm depth error (+/- 0.1 mm)"):
            dz_mm = abs(depth_sensitivity(RIG, 0.8)) * 0.41 * 1000.0
            assert abs(dz_mm - 5.47) < 0.1
            assert abs(dz_mm - 5.5) < 0.1

    def test_03_crop_disparity_bookkeeping(self):
        from stereolabel.augment import crop_stereo

        with criterion(3, "full-frame disparities {48, 96} px map to crop disparities {18, 66} px exactly"):
            rng = np.random.default_rng(0)
            left, right = rng.random((480, 640, 3)), rng.random((480, 640, 3))
            labels = (UVD(300.0, 200.0, 48.0), UVD(330.0, 220.0, 96.0))
            crop = crop_stereo(left, right, (320, 220), labels, jitter_px=0)
            assert crop.labels[0].d == 18.0
            assert crop.labels[1].d == 66.0

    def test_04_synthetic_end_to_end(self, tmp_path):
        from stereolabel.sessions import run_pipeline
        from stereolabel.simulate import NoiseModel
        from stereolabel.synthetic import make_session

        with criterion(4, "noiseless pipeline exact; QA accept rate >= 95% over 100 noisy sessions, < 30 s"):
            session, truth = make_session(tmp_path / "clean", n_frames=20, seed=0, render=False)
            run_pipeline(session)
            assert session.qa.accepted
            for fid, est in session.poses.items():
                assert rotation_angle(est.pose.rotation @ truth.poses[fid].rotation.T) <= 1e-6
                assert np.linalg.norm(est.pose.translation - truth.poses[fid].translation) <= 1e-6
            for kp in session.keypoints:
                assert np.linalg.norm(kp.position - truth.keypoints[kp.keypoint_id - 1]) <= 1e-9
            for fid, fl in session.labels.items():
                got = np.array([[l.u, l.v, l.d] for l in fl.labels])
                assert np.max(np.abs(got - truth.labels[fid])) <= 1e-6

            start = time.perf_counter()
            accepted = 0
            noise = NoiseModel(pose_corner_rmse=1.21, annotation_rmse_mean=2.28, annotation_rmse_std=0.83)
            for seed in range(100):
                s, _ = make_session(
                    tmp_path / f"noisy{seed}", n_frames=14, seed=seed + 1, noise=noise, render=False
                )
                run_pipeline(s, persist=False)
                accepted += int(s.qa.accepted)
            elapsed = time.perf_counter() - start
            assert accepted >= 95, f"only {accepted}/100 sessions accepted"
            assert elapsed < 30.0, f"took {elapsed:.1f} s"

    def test_05_loss_unit_suite(self):
        from stereolabel.losses import (
            Heatmaps,
            SymmetrySpec,
            ViewProjection,
            alpha_schedule,
            integral_decode,
            inverted_gaussian,
            keypoint_loss,
            keypoint_loss_grad,
            locality_loss,
            permutation_min,
            projection_loss,
            projection_loss_grad,
            total_loss,
        )
        from stereolabel.geometry import look_at

        with criterion(5, "losses, curriculum, permutation minimum and analytic gradients"):
            rng = np.random.default_rng(1)
            kps = np.column_stack(
                (rng.uniform(100, 540, 4), rng.uniform(100, 380, 4), rng.uniform(30, 90, 4))
            )
            # keypoint loss: zero at equality, exact unit offset
            assert keypoint_loss(kps, kps) == 0.0
            assert keypoint_loss(kps + [[1, 0, 0]] * 4, kps) == 4.0

            # projection loss: zero at equality; single-left-view equals
            # squared pixel distance between the reprojections
            views = [ViewProjection(pose=RigidTransform.identity(), intrinsics=INTR)]
            views.append(
                ViewProjection(pose=look_at(np.array([0.6, 0.2, -0.3]), np.array([0.0, 0.0, 1.0])), intrinsics=INTR)
            )
            assert projection_loss(kps, kps, RIG, views) == 0.0
            pred = kps + rng.normal(0, 1.0, kps.shape)
            left_only = views[:1]

            def pix(uvd):
                return np.stack([project(INTR, uvd_to_xyz(RIG, UVD(*row))) for row in uvd])

            oracle = float(np.sum((pix(pred) - pix(kps)) ** 2))
            assert projection_loss(pred, kps, RIG, left_only) == pytest.approx(oracle, rel=1e-12)

            # locality loss: delta at label -> 0; far delta -> ~1; sigma 10
            prob = np.zeros((1, 120, 180))
            prob[0, 20, 30] = 1.0
            assert locality_loss(prob, [(30.0, 20.0)]) == pytest.approx(0.0, abs=1e-12)
            far = np.zeros((1, 120, 180))
            far[0, 10, 10] = 1.0
            assert locality_loss(far, [(110.0, 110.0)]) == pytest.approx(1.0, abs=1e-4)

            # curriculum
            assert alpha_schedule(0.2) == 0.0
            assert alpha_schedule(0.5) == pytest.approx(1.25)
            assert alpha_schedule(1.0) == 2.5
            assert total_loss(1.0, 1.0, 1.0, 0.0) == pytest.approx(1.001)
            assert total_loss(1.0, 1.0, 1.0, 1.0) == pytest.approx(3.501)

            # permutation minimum reaches zero on symmetric relabelings
            sym = SymmetrySpec.with_swaps(4, (2, 3))
            value, perm = permutation_min(keypoint_loss, kps[[0, 1, 3, 2]], kps, sym)
            assert value == pytest.approx(0.0, abs=1e-18) and perm == (0, 1, 3, 2)

            # analytic gradients vs central differences at step 1e-4
            def fd_rel(fn, x, grad, step=1e-4):
                fd = np.zeros_like(x)
                for idx in np.ndindex(x.shape):
                    xp, xm = x.copy(), x.copy()
                    xp[idx] += step
                    xm[idx] -= step
                    fd[idx] = (fn(xp) - fn(xm)) / (2 * step)
                return np.linalg.norm(fd - grad) / max(np.linalg.norm(fd), 1e-12)

            assert fd_rel(lambda p: keypoint_loss(p, kps), pred, keypoint_loss_grad(pred, kps)) < 1e-5
            assert (
                fd_rel(
                    lambda p: projection_loss(p, kps, RIG, views),
                    pred,
                    projection_loss_grad(pred, kps, RIG, views),
                )
                < 1e-5
            )

            # integral decoding sanity retained under the same criterion
            logits = np.zeros((1, 48, 64))
            logits[0, 20, 33] = 1e4
            decoded = integral_decode(Heatmaps(logits=logits, disparity=np.full((1, 48, 64), 42.0)))
            assert np.allclose(decoded[0], [33.0, 20.0, 42.0], atol=1e-6)
            _ = inverted_gaussian((10, 10), (5, 5))

    def test_06_metrics_oracle_equivalence(self):
        from stereolabel.metrics import EvalRecord, auc, mae, pct_under

        with criterion(6, "mae/pct/auc match brute-force oracles on 1000 random instances to 1e-12"):
            rng = np.random.default_rng(2)
            for _ in range(1000):
                errors = rng.uniform(0, 0.15, size=int(rng.integers(1, 40)))
                records = [EvalRecord(errors_3d=errors)]
                assert abs(mae(records) - errors.sum() / errors.size) < 1e-12
                assert (
                    abs(pct_under(records, 0.02) - 100.0 * sum(1 for e in errors if e < 0.02) / errors.size)
                    < 1e-12
                )
                # exact integral of the step CDF over [0, 0.1]
                contrib = sum(max(0.0, 0.1 - e) for e in errors)
                assert abs(auc(records) - 100.0 * contrib / (errors.size * 0.1)) < 1e-12
            assert auc([EvalRecord(errors_3d=np.zeros(5))]) == 100.0
            assert auc([EvalRecord(errors_3d=np.full(3, 0.2))]) == 0.0
            assert auc([EvalRecord(errors_3d=np.full(4, 0.05))]) == pytest.approx(50.0)

    def test_07_procrustes(self):
        from stereolabel.losses import SymmetrySpec
        from stereolabel.pose_fit import KeypointModel, procrustes_align

        with criterion(7, "1000 rigid recoveries to 1e-9; no reflections; collinear flagged with axis"):
            pts = np.array(
                [[0.05, 0.05, 0.0], [-0.05, 0.05, 0.0], [0.0, -0.05, 0.05], [0.0, -0.02, -0.06]]
            )
            model = KeypointModel(points=pts, sym=SymmetrySpec.identity(4))
            rng = np.random.default_rng(3)
            for _ in range(1000):
                w = rng.normal(size=3)
                w = w / np.linalg.norm(w) * rng.uniform(0, np.pi * 0.95)
                g = RigidTransform(so3_exp(w), rng.normal(size=3))
                res = procrustes_align(model, g.apply(pts))
                assert rotation_angle(res.transform.rotation @ g.rotation.T) < 1e-9
                assert np.linalg.norm(res.transform.translation - g.translation) < 1e-9

            for _ in range(200):
                reflected = pts * [1, 1, -1] + rng.normal(size=3)
                res = procrustes_align(model, reflected)
                assert np.linalg.det(res.transform.rotation) > 0.999999999

            line = KeypointModel(
                points=np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.2]]), sym=SymmetrySpec.identity(2)
            )
            for _ in range(200):
                w = rng.normal(size=3)
                w = w / np.linalg.norm(w) * rng.uniform(0, np.pi * 0.95)
                g = RigidTransform(so3_exp(w), rng.normal(size=3))
                observed = g.apply(line.points)
                res = procrustes_align(line, observed)
                assert res.degenerate
                axis = observed[1] - observed[0]
                axis /= np.linalg.norm(axis)
                assert np.linalg.norm(res.transform.rotation @ [0.0, 0.0, 1.0] - axis) < 1e-9

    def test_08_augmentation_invariants(self):
        from stereolabel.augment import StereoCrop, mirror_stereo, rotate_about_x
        from stereolabel.geometry import rotation_about_x as rx

        with criterion(8, "mirror involution exact; X-rotation epipolar to 1e-9, 3D oracle to 1e-6 over 1000 draws"):
            rng = np.random.default_rng(4)
            intr = CameraIntrinsics(
                fx=400.0, fy=400.0, cx=319.5, cy=239.5, width=640, height=480
            )
            rig = StereoRig(left=intr, baseline=0.12)

            crop = StereoCrop(
                left=rng.random((120, 180, 3)),
                right=rng.random((120, 180, 3)),
                origin=(140, 90),
                labels=tuple(
                    UVD(rng.uniform(0, 179), rng.uniform(0, 119), rng.uniform(1, 60)) for _ in range(10)
                ),
            )
            back = mirror_stereo(mirror_stereo(crop))
            assert np.array_equal(back.left, crop.left) and np.array_equal(back.right, crop.right)
            # disparity and row are carried, so they are bit-exact; u picks
            # up at most one rounding step from the coordinate reflection
            for before, after in zip(crop.labels, back.labels):
                assert after.d == before.d
                assert after.v == before.v
                assert abs(after.u - before.u) < 1e-9
            for before, after in zip(crop.labels, mirror_stereo(crop).labels):
                assert after.d == before.d

            for _ in range(1000):
                p = XYZ(rng.uniform(-0.25, 0.25), rng.uniform(-0.18, 0.18), rng.uniform(0.5, 1.4))
                ul, vl = project(intr, p)
                ur, _ = project(intr, XYZ(p.x - rig.baseline, p.y, p.z))
                u0, v0 = 150, 100
                sample = StereoCrop(
                    left=np.zeros((2, 2)), right=np.zeros((2, 2)), origin=(u0, v0),
                    labels=(UVD(ul - u0, vl - v0, (ul - ur) - 30),),
                )
                angle = rng.uniform(-5, 5)
                got = rotate_about_x(sample, intr, angle).labels_full_frame()[0]

                rot = rx(np.radians(angle))
                p_left = rot @ p.as_array()
                p_right = rot @ (p.as_array() - [rig.baseline, 0.0, 0.0])
                oracle_ul, oracle_vl = project(intr, XYZ(*p_left))
                oracle_ur, oracle_vr = project(intr, XYZ(*p_right))
                assert abs(oracle_vl - oracle_vr) < 1e-9
                assert abs(got.u - oracle_ul) < 1e-6
                assert abs(got.v - oracle_vl) < 1e-6
                assert abs(got.d - (oracle_ul - oracle_ur)) < 1e-6

    def test_09_depth_warp(self):
        from stereolabel.depth_warp import DepthImage, warp_depth

        with criterion(9, "identity warp to 1e-6 m; baseline shift to 0.5 px; z-buffer minimality"):
            intr = CameraIntrinsics(fx=200.0, fy=200.0, cx=79.5, cy=59.5, width=160, height=120)
            depth = np.full((120, 160), 0.8)
            depth[40:70, 50:90] = 0.55
            depth[10:20, 10:20] = 0.0
            img = DepthImage(depth, intr)
            out = warp_depth(img, RigidTransform.identity(), intr)
            valid = img.valid_mask
            assert np.max(np.abs(out.depth[valid] - img.depth[valid])) <= 1e-6

            z, b = 0.8, 0.12
            blob = np.zeros((120, 160))
            blob[56:64, 100:108] = z
            t = RigidTransform(np.eye(3), np.array([-b, 0.0, 0.0]))
            shifted = warp_depth(DepthImage(blob, intr), t, intr)
            src_u = np.flatnonzero(blob.any(axis=0)).mean()
            out_u = np.flatnonzero(shifted.depth.any(axis=0)).mean()
            assert abs((out_u - src_u) + intr.fx * b / z) <= 0.5

            # adversarial two-layer scene: every covered pixel keeps the minimum
            big = CameraIntrinsics(fx=400.0, fy=400.0, cx=320.0, cy=240.0, width=640, height=480)
            layered = np.zeros((480, 640))
            layered[240, 400] = 0.5
            layered[240, 364] = 0.8
            warped = warp_depth(DepthImage(layered, big), RigidTransform(np.eye(3), np.array([-0.12, 0, 0])), big)
            assert warped.depth[240, 304] == pytest.approx(0.5, abs=1e-9)

    def test_10_determinism_and_formats(self, tmp_path):
        from stereolabel.sessions import load_session, run_pipeline, save_session
        from stereolabel.simulate import NoiseModel
        from stereolabel.synthetic import make_session

        with criterion(10, "byte-identical outputs across two runs; 50 fuzzed save/load round-trips"):
            def everything(root: Path) -> dict[str, bytes]:
                return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

            runs = []
            for name in ("run_a", "run_b"):
                session, _ = make_session(
                    tmp_path / name, session_id="det", n_frames=12, seed=77,
                    noise=NoiseModel(0.8, 1.5, 0.4),
                )
                run_pipeline(session)
                runs.append(everything(tmp_path / name))
            assert runs[0] == runs[1]

            rng = np.random.default_rng(5)
            for trial in range(50):
                n_kp = int(rng.integers(1, 5))
                root = tmp_path / f"fz{trial}"
                make_session(
                    root,
                    session_id=f"fz{trial}",
                    n_frames=int(rng.integers(8, 14)),
                    seed=int(rng.integers(0, 1_000_000)),
                    noise=NoiseModel(
                        float(rng.uniform(0, 2)), float(rng.uniform(0, 3)), float(rng.uniform(0, 1))
                    ),
                    keypoints=rng.uniform([-0.1, -0.1, 0.0], [0.1, 0.1, 0.25], size=(n_kp, 3)),
                    render=False,
                )
                copied = tmp_path / f"fz{trial}_copy"
                save_session(load_session(root), copied)
                a = {p.name: p.read_bytes() for p in sorted(root.glob("*.json"))}
                b = {p.name: p.read_bytes() for p in sorted(copied.glob("*.json"))}
                assert a == b
