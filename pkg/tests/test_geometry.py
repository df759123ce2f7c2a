import numpy as np
import pytest

from stereolabel.errors import BehindCameraError, InvalidDisparityError
from stereolabel.geometry import (
    CameraIntrinsics,
    RigidTransform,
    StereoRig,
    UVD,
    XYZ,
    camera_center,
    depth_sensitivity,
    look_at,
    project,
    project_points,
    rotation_angle,
    so3_exp,
    so3_log,
    uvd_to_xyz,
    xyz_to_uvd,
)


def make_intrinsics(**kw):
    base = dict(fx=400.0, fy=400.0, cx=320.0, cy=240.0, width=640, height=480)
    base.update(kw)
    return CameraIntrinsics(**base)


def make_rig():
    return StereoRig(left=make_intrinsics(), baseline=0.12)


def random_transform(rng):
    rot = so3_exp(rng.normal(size=3))
    return RigidTransform(rot, rng.normal(size=3))


class TestProject:
    def test_on_axis_point(self):
        assert project(make_intrinsics(), XYZ(0, 0, 1)) == (320.0, 240.0)

    def test_off_axis_point(self):
        # closed-form pinhole: u = 400*0.5/0.5 + 320 = 720
        assert project(make_intrinsics(), XYZ(0.5, 0, 0.5)) == (720.0, 240.0)

    def test_behind_camera(self):
        with pytest.raises(BehindCameraError):
            project(make_intrinsics(), XYZ(0, 0, -1))

    def test_distortion_matches_manual_formula(self):
        intr = make_intrinsics(distortion=(0.1, -0.05, 0.001, -0.002, 0.01))
        p = XYZ(0.2, -0.1, 0.9)
        xn, yn = p.x / p.z, p.y / p.z
        r2 = xn * xn + yn * yn
        k1, k2, p1, p2, k3 = intr.distortion
        radial = 1 + k1 * r2 + k2 * r2**2 + k3 * r2**3
        xd = xn * radial + 2 * p1 * xn * yn + p2 * (r2 + 2 * xn * xn)
        yd = yn * radial + p1 * (r2 + 2 * yn * yn) + 2 * p2 * xn * yn
        u, v = project(intr, p)
        assert u == pytest.approx(intr.fx * xd + intr.cx, abs=1e-12)
        assert v == pytest.approx(intr.fy * yd + intr.cy, abs=1e-12)


class TestUvdXyz:
    def test_one_meter_disparity(self):
        # d = 48 px pairs with 1 m range at f = 400 px, b = 0.12 m
        p = uvd_to_xyz(make_rig(), UVD(320, 240, 48))
        assert np.allclose(p.as_array(), [0, 0, 1.0])

    def test_half_meter(self):
        p = uvd_to_xyz(make_rig(), UVD(720, 240, 96))
        assert np.allclose(p.as_array(), [0.5, 0, 0.5])

    def test_zero_disparity(self):
        with pytest.raises(InvalidDisparityError):
            uvd_to_xyz(make_rig(), UVD(320, 240, 0))

    def test_xyz_to_uvd_examples(self):
        k = xyz_to_uvd(make_rig(), XYZ(0, 0, 0.5))
        assert np.allclose(k.as_array(), [320, 240, 96])
        with pytest.raises(BehindCameraError):
            xyz_to_uvd(make_rig(), XYZ(0, 0, -0.5))

    def test_mutual_inverses(self):
        rig = make_rig()
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = UVD(rng.uniform(0, 640), rng.uniform(0, 480), rng.uniform(1, 200))
            back = xyz_to_uvd(rig, uvd_to_xyz(rig, k))
            assert np.allclose(back.as_array(), k.as_array(), rtol=1e-9, atol=1e-9)

    def test_projection_consistency(self):
        # projecting the reprojected point must land on the original pixel
        rig = make_rig()
        rng = np.random.default_rng(1)
        for _ in range(100):
            k = UVD(rng.uniform(0, 640), rng.uniform(0, 480), rng.uniform(1, 200))
            u, v = project(rig.left, uvd_to_xyz(rig, k))
            assert abs(u - k.u) < 1e-9 and abs(v - k.v) < 1e-9

    def test_disparity_is_left_right_pixel_offset(self):
        # right camera = left displaced by +b along X, so a camera point p
        # appears at p - (b, 0, 0) in the right camera frame
        rig = make_rig()
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = XYZ(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(0.3, 2.0))
            k = xyz_to_uvd(rig, p)
            u_left, _ = project(rig.left, p)
            u_right, v_right = project(rig.left, XYZ(p.x - rig.baseline, p.y, p.z))
            assert k.d == pytest.approx(u_left - u_right, abs=1e-9)
            assert v_right == pytest.approx(k.v, abs=1e-12)


class TestDepthSensitivity:
    def test_paper_operating_point(self):
        # f*b = 48 px*m, z = 0.8 m: 0.41 px disparity error -> 5.47 mm depth error
        s = depth_sensitivity(make_rig(), 0.8)
        assert s == pytest.approx(-0.0133333333, abs=1e-9)
        assert abs(s) * 0.41 * 1000 == pytest.approx(5.4666667, abs=1e-4)

    def test_vanishes_near_zero(self):
        assert abs(depth_sensitivity(make_rig(), 1e-6)) < 1e-10

    def test_quadratic_law(self):
        rig = make_rig()
        assert depth_sensitivity(rig, 1.6) == pytest.approx(4 * depth_sensitivity(rig, 0.8))

    def test_rejects_nonpositive_depth(self):
        with pytest.raises(ValueError):
            depth_sensitivity(make_rig(), 0.0)


class TestRigidTransform:
    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            t = random_transform(rng)
            ident = t.compose(t.invert())
            assert np.allclose(ident.rotation, np.eye(3), atol=1e-12)
            assert np.allclose(ident.translation, 0, atol=1e-12)

    def test_chain_matches_matrix_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            a, b, c = (random_transform(rng) for _ in range(3))
            chained = a.compose(b).compose(c)
            oracle = a.matrix() @ b.matrix() @ c.matrix()
            assert np.allclose(chained.matrix(), oracle, atol=1e-12)
            p = rng.normal(size=3)
            assert np.allclose(chained.apply(p), (oracle @ np.append(p, 1.0))[:3], atol=1e-10)

    def test_apply_identity(self):
        p = np.array([0.3, -0.2, 1.7])
        assert np.allclose(RigidTransform.identity().apply(p), p)

    def test_compose_apply_equals_sequential_apply(self):
        rng = np.random.default_rng(5)
        a, b = random_transform(rng), random_transform(rng)
        p = rng.normal(size=3)
        assert np.allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)

    def test_orthonormality_drift_under_repeated_compose(self):
        # drift over many compositions stays far below 1e-9 per 1e6 budget
        rng = np.random.default_rng(6)
        step = random_transform(rng)
        acc = RigidTransform.identity()
        for _ in range(50_000):
            acc = step.compose(acc)
        err = np.linalg.norm(acc.rotation @ acc.rotation.T - np.eye(3))
        assert err < 5e-11

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


class TestSO3:
    def test_exp_log_roundtrip(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            w = rng.normal(size=3)
            w = w / np.linalg.norm(w) * rng.uniform(0, np.pi - 1e-6)
            assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-8)

    def test_rotation_angle(self):
        w = np.array([0.0, 0.3, 0.0])
        assert rotation_angle(so3_exp(w)) == pytest.approx(0.3, abs=1e-12)


class TestLookAt:
    def test_target_projects_to_principal_point(self):
        intr = make_intrinsics()
        rng = np.random.default_rng(8)
        for _ in range(50):
            pos = rng.normal(size=3) + np.array([0, 0, 2.0])
            pose = look_at(pos, np.zeros(3))
            u, v = project(intr, XYZ(*pose.apply(np.zeros(3))))
            assert u == pytest.approx(intr.cx, abs=1e-9)
            assert v == pytest.approx(intr.cy, abs=1e-9)
            assert np.allclose(camera_center(pose), pos, atol=1e-12)

    def test_straight_down_fallback(self):
        pose = look_at(np.array([0.0, 0.0, 1.0]), np.zeros(3))
        assert np.allclose(pose.apply(np.zeros(3)), [0, 0, 1.0], atol=1e-12)


class TestValidation:
    def test_intrinsics_invariants(self):
        with pytest.raises(ValueError):
            make_intrinsics(fx=-1.0)
        with pytest.raises(ValueError):
            make_intrinsics(cx=640.0)

    def test_rig_requires_clean_left_camera(self):
        with pytest.raises(ValueError):
            StereoRig(left=make_intrinsics(distortion=(0.1,)), baseline=0.12)
        with pytest.raises(ValueError):
            StereoRig(left=make_intrinsics(), baseline=0.0)

    def test_project_points_batch(self):
        intr = make_intrinsics()
        pts = np.array([[0, 0, 1.0], [0.5, 0, 0.5]])
        assert np.allclose(project_points(intr, pts), [[320, 240], [720, 240]])
