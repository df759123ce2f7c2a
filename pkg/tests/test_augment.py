import numpy as np
import pytest

from stereolabel.augment import (
    PhotometricParams,
    StereoCrop,
    _hsv_to_rgb,
    _rgb_to_hsv,
    crop_stereo,
    mirror_stereo,
    photometric_augment,
    rotate_about_x,
)
from stereolabel.geometry import CameraIntrinsics, StereoRig, UVD, XYZ, project, uvd_to_xyz

W, H = 640, 480
INTR = CameraIntrinsics(fx=400.0, fy=400.0, cx=(W - 1) / 2, cy=(H - 1) / 2, width=W, height=H)
RIG = StereoRig(left=INTR, baseline=0.12)


def stereo_pair(rng):
    return rng.random((H, W, 3)), rng.random((H, W, 3))


def labels_for_point(p: XYZ):
    ul, vl = project(INTR, p)
    ur, vr = project(INTR, XYZ(p.x - RIG.baseline, p.y, p.z))
    return UVD(ul, vl, ul - ur)


class TestCropStereo:
    def test_disparity_offset_bookkeeping(self):
        rng = np.random.default_rng(0)
        left, right = stereo_pair(rng)
        labels = (UVD(300.0, 200.0, 48.0), UVD(310.0, 210.0, 96.0))
        crop = crop_stereo(left, right, (300, 200), labels, jitter_px=0)
        assert crop.labels[0].d == 18.0
        assert crop.labels[1].d == 66.0

    def test_patch_contents_and_rows_align(self):
        rng = np.random.default_rng(1)
        left, right = stereo_pair(rng)
        crop = crop_stereo(left, right, (320, 240), jitter_px=0)
        u0, v0 = crop.origin
        assert crop.left.shape == (120, 180, 3)
        assert np.array_equal(crop.left, left[v0 : v0 + 120, u0 : u0 + 180])
        assert np.array_equal(crop.right, right[v0 : v0 + 120, u0 - 30 : u0 - 30 + 180])

    def test_corner_bbox_clamped_with_consistent_labels(self):
        rng = np.random.default_rng(2)
        left, right = stereo_pair(rng)
        label = UVD(5.0, 3.0, 50.0)
        crop = crop_stereo(left, right, (0, 0), (label,), jitter_px=0)
        u0, v0 = crop.origin
        assert u0 == 30 and v0 == 0  # clamped so both crops fit
        assert crop.labels[0].u == label.u - u0
        assert crop.labels[0].v == label.v - v0

    def test_center_outside_frame_rejected(self):
        rng = np.random.default_rng(3)
        left, right = stereo_pair(rng)
        with pytest.raises(ValueError):
            crop_stereo(left, right, (700, 200))

    def test_jitter_is_seeded(self):
        rng1, rng2 = np.random.default_rng(7), np.random.default_rng(7)
        left, right = stereo_pair(np.random.default_rng(4))
        a = crop_stereo(left, right, (320, 240), rng=rng1)
        b = crop_stereo(left, right, (320, 240), rng=rng2)
        assert a.origin == b.origin

    def test_full_frame_round_trip(self):
        rng = np.random.default_rng(5)
        left, right = stereo_pair(rng)
        labels = (UVD(315.0, 233.0, 60.0),)
        crop = crop_stereo(left, right, (320, 240), labels, jitter_px=0)
        (back,) = crop.labels_full_frame()
        assert (back.u, back.v, back.d) == (315.0, 233.0, 60.0)


class TestMirror:
    def make_crop(self, rng, labels=()):
        left, right = rng.random((120, 180, 3)), rng.random((120, 180, 3))
        return StereoCrop(left=left, right=right, origin=(100, 50), labels=labels)

    def test_involution(self):
        rng = np.random.default_rng(6)
        crop = self.make_crop(rng, labels=(UVD(40.0, 70.0, 22.0), UVD(90.5, 10.25, 33.5)))
        back = mirror_stereo(mirror_stereo(crop))
        assert np.array_equal(back.left, crop.left)
        assert np.array_equal(back.right, crop.right)
        for before, after in zip(crop.labels, back.labels):
            assert after.v == before.v and after.d == before.d
            assert abs(after.u - before.u) < 1e-9  # one rounding step at most

    def test_disparity_preserved_exactly(self):
        rng = np.random.default_rng(7)
        labels = tuple(UVD(rng.uniform(0, 179), rng.uniform(0, 119), rng.uniform(1, 60)) for _ in range(20))
        mirrored = mirror_stereo(self.make_crop(rng, labels))
        for before, after in zip(labels, mirrored.labels):
            assert after.d == before.d
            assert after.v == before.v

    def test_centered_keypoint_is_fixed_point(self):
        rng = np.random.default_rng(8)
        center = (180 - 1) / 2
        crop = self.make_crop(rng, labels=(UVD(center, 60.0, 0.0),))
        assert mirror_stereo(crop).labels[0] == UVD(center, 60.0, 0.0)

    def test_images_swap_and_flip(self):
        rng = np.random.default_rng(9)
        crop = self.make_crop(rng)
        m = mirror_stereo(crop)
        assert np.array_equal(m.left, crop.right[:, ::-1])
        assert np.array_equal(m.right, crop.left[:, ::-1])

    def test_mirrored_label_is_mirrored_3d_point(self):
        # full-frame crop (origin 0, offset 0) with the principal point at
        # the image center: mirroring negates x about the rig mirror plane
        rng = np.random.default_rng(10)
        for _ in range(50):
            p = XYZ(rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), rng.uniform(0.5, 1.5))
            label = labels_for_point(p)
            crop = StereoCrop(
                left=np.zeros((H, W)), right=np.zeros((H, W)), origin=(0, 0),
                labels=(label,), right_offset=0,
            )
            mirrored = mirror_stereo(crop).labels[0]
            q = uvd_to_xyz(RIG, mirrored)
            assert q.x == pytest.approx(RIG.baseline - p.x, abs=1e-9)
            assert q.y == pytest.approx(p.y, abs=1e-9)
            assert q.z == pytest.approx(p.z, abs=1e-9)


class TestRotateAboutX:
    def crop_with_point(self, p: XYZ, origin=(150, 100)):
        label_full = labels_for_point(p)
        u0, v0 = origin
        label_crop = UVD(label_full.u - u0, label_full.v - v0, label_full.d - 30)
        rng = np.random.default_rng(11)
        return (
            StereoCrop(
                left=rng.random((120, 180, 3)),
                right=rng.random((120, 180, 3)),
                origin=origin,
                labels=(label_crop,),
            ),
            label_full,
        )

    def test_zero_angle_is_identity(self):
        crop, _ = self.crop_with_point(XYZ(0.05, -0.02, 0.8))
        out = rotate_about_x(crop, INTR, 0.0)
        assert out is crop

    def test_epipolar_rows_stay_aligned(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            p = XYZ(rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.15), rng.uniform(0.5, 1.2))
            crop, _ = self.crop_with_point(p)
            angle = rng.uniform(-5, 5)
            out = rotate_about_x(crop, INTR, angle)
            label = out.labels[0]
            # reconstruct the left and right full-frame rows independently
            from stereolabel.augment import _apply_homography
            from stereolabel.geometry import rotation_about_x as rx

            h = INTR.matrix() @ rx(np.radians(angle)) @ np.linalg.inv(INTR.matrix())
            full = crop.labels_full_frame()[0]
            left = _apply_homography(h, [(full.u, full.v)])[0]
            right = _apply_homography(h, [(full.u - full.d, full.v)])[0]
            assert abs(left[1] - right[1]) < 1e-9
            assert label.v == pytest.approx(left[1] - crop.origin[1], abs=1e-9)

    def test_matches_3d_reprojection_oracle(self):
        rng = np.random.default_rng(13)
        from stereolabel.geometry import rotation_about_x as rx

        for _ in range(100):
            p = XYZ(rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.15), rng.uniform(0.5, 1.2))
            crop, _ = self.crop_with_point(p)
            angle = rng.uniform(-5, 5)
            out = rotate_about_x(crop, INTR, angle)
            got = out.labels_full_frame()[0]

            # oracle: rotate the 3D point with both cameras and re-project
            rot = rx(np.radians(angle))
            p_left = rot @ p.as_array()
            p_right = rot @ (p.as_array() - [RIG.baseline, 0, 0])
            ul, vl = project(INTR, XYZ(*p_left))
            ur, vr = project(INTR, XYZ(*p_right))
            assert got.u == pytest.approx(ul, abs=1e-6)
            assert got.v == pytest.approx(vl, abs=1e-6)
            assert got.d == pytest.approx(ul - ur, abs=1e-6)

    def test_rejects_large_angles(self):
        crop, _ = self.crop_with_point(XYZ(0.0, 0.0, 0.8))
        with pytest.raises(ValueError):
            rotate_about_x(crop, INTR, 7.0)

    def test_image_content_moves_with_homography(self):
        # a bright dot placed at a known pixel must move to the predicted
        # position (within bilinear blur)
        crop, _ = self.crop_with_point(XYZ(0.0, 0.0, 0.8))
        left = np.zeros((120, 180, 3))
        left[60, 90] = 1.0
        probe = StereoCrop(left=left, right=left.copy(), origin=crop.origin, labels=())
        out = rotate_about_x(probe, INTR, 3.0)
        peak = np.unravel_index(np.argmax(out.left.sum(axis=2)), (120, 180))
        from stereolabel.augment import _apply_homography
        from stereolabel.geometry import rotation_about_x as rx

        h = INTR.matrix() @ rx(np.radians(3.0)) @ np.linalg.inv(INTR.matrix())
        u0, v0 = crop.origin
        expect = _apply_homography(h, [(90 + u0, 60 + v0)])[0] - [u0, v0]
        assert abs(peak[1] - expect[0]) <= 1.0
        assert abs(peak[0] - expect[1]) <= 1.0


class TestPhotometric:
    def test_identity_params_yield_pure_normalization(self):
        rng = np.random.default_rng(14)
        img = rng.random((40, 60, 3))
        params = PhotometricParams(
            hue_max_delta=0.0, saturation_bounds=(1.0, 1.0), contrast_bounds=(1.0, 1.0),
            brightness_max_delta=0.0, dropout_enabled=False,
        )
        out = photometric_augment(img, params, seed=0)
        expected = (img - np.array(params.normalize_mean)) / np.array(params.normalize_std)
        assert np.allclose(out, expected, atol=1e-12)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(15)
        img = rng.random((40, 60, 3))
        params = PhotometricParams()
        a = photometric_augment(img, params, seed=123)
        b = photometric_augment(img, params, seed=123)
        assert np.array_equal(a, b)
        c = photometric_augment(img, params, seed=124)
        assert not np.array_equal(a, c)

    def test_contrast_scales_deviation_from_mean(self):
        rng = np.random.default_rng(16)
        img = rng.random((40, 60, 3))
        factor = 0.85
        params = PhotometricParams(
            hue_max_delta=0.0, saturation_bounds=(1.0, 1.0),
            contrast_bounds=(factor, factor), brightness_max_delta=0.0, dropout_enabled=False,
        )
        out = photometric_augment(img, params, seed=1)
        mean = img.mean(axis=(0, 1), keepdims=True)
        expected = ((img - mean) * factor + mean - np.array(params.normalize_mean)) / np.array(
            params.normalize_std
        )
        assert np.allclose(out, expected, atol=1e-12)

    def test_hsv_round_trip(self):
        rng = np.random.default_rng(17)
        img = rng.random((30, 30, 3))
        assert np.allclose(_hsv_to_rgb(_rgb_to_hsv(img)), img, atol=1e-12)

    def test_rejects_out_of_range_input(self):
        with pytest.raises(ValueError):
            photometric_augment(np.full((4, 4, 3), 1.5), PhotometricParams(), seed=0)
