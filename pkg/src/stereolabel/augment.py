"""Fixed-size stereo crops and epipolar-preserving augmentation.

Crops keep the rectified-pair property: both patches cover the same rows,
and the right crop is shifted 30 px toward the object so the apparent
disparity drops by exactly that offset.  Geometric augmentations are
limited to operations that keep epipolar lines horizontal: stereo
mirroring and rotation about the camera X axis (the baseline).  Labels
ride along with every transform; disparity is always recomputed from the
implied left/right pixel positions rather than scaled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, UVD, rotation_about_x

CROP_WIDTH = 180
CROP_HEIGHT = 120
RIGHT_CROP_OFFSET = 30
BBOX_JITTER_PX = 20


@dataclass(frozen=True)
class StereoCrop:
    """A left/right patch pair with crop-frame UVD labels.

    ``origin`` is the left crop's top-left pixel in the full left image;
    the right crop starts ``right_offset`` px further left in the full
    right image, so crop disparity = full disparity - right_offset.
    """

    left: np.ndarray
    right: np.ndarray
    origin: tuple[int, int]
    labels: tuple[UVD, ...] = ()
    right_offset: int = RIGHT_CROP_OFFSET

    def __post_init__(self):
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        if left.shape != right.shape:
            raise ValueError(f"left/right patch shapes differ: {left.shape} vs {right.shape}")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @property
    def width(self) -> int:
        return self.left.shape[1]

    @property
    def height(self) -> int:
        return self.left.shape[0]

    def labels_full_frame(self) -> tuple[UVD, ...]:
        """Crop-frame labels converted back to full-frame coordinates."""
        u0, v0 = self.origin
        return tuple(
            UVD(l.u + u0, l.v + v0, l.d + self.right_offset) for l in self.labels
        )


def crop_stereo(
    left: np.ndarray,
    right: np.ndarray,
    bbox_center: tuple[float, float],
    labels: tuple[UVD, ...] = (),
    jitter_px: float = BBOX_JITTER_PX,
    rng: np.random.Generator | None = None,
    size: tuple[int, int] = (CROP_WIDTH, CROP_HEIGHT),
    right_offset: int = RIGHT_CROP_OFFSET,
) -> StereoCrop:
    """Cut a fixed-size stereo crop centered on a detection bounding box.

    The center is dithered by up to ``jitter_px`` in each axis when an RNG
    is supplied, which keeps downstream consumers robust to bounding-box
    placement.  Crops are clamped inside both images (no rescaling); labels
    are rewritten into crop coordinates with the disparity offset applied.
    """
    left = np.asarray(left)
    right = np.asarray(right)
    if left.shape != right.shape:
        raise ValueError("stereo pair shapes differ")
    img_h, img_w = left.shape[:2]
    w, h = size
    if img_w < w + right_offset or img_h < h:
        raise ValueError(f"images ({img_w}x{img_h}) cannot fit a {w}x{h} crop with offset {right_offset}")

    cu, cv = float(bbox_center[0]), float(bbox_center[1])
    if not (0 <= cu < img_w and 0 <= cv < img_h):
        raise ValueError(f"object center ({cu}, {cv}) outside the frame")
    if rng is not None and jitter_px > 0:
        cu += rng.uniform(-jitter_px, jitter_px)
        cv += rng.uniform(-jitter_px, jitter_px)

    u0 = int(np.clip(int(round(cu)) - w // 2, right_offset, img_w - w))
    v0 = int(np.clip(int(round(cv)) - h // 2, 0, img_h - h))

    crop_left = left[v0 : v0 + h, u0 : u0 + w].copy()
    crop_right = right[v0 : v0 + h, u0 - right_offset : u0 - right_offset + w].copy()
    moved = tuple(UVD(l.u - u0, l.v - v0, l.d - right_offset) for l in labels)
    return StereoCrop(
        left=crop_left, right=crop_right, origin=(u0, v0), labels=moved, right_offset=right_offset
    )


def mirror_stereo(crop: StereoCrop) -> StereoCrop:
    """Swap and horizontally flip the pair, as if the rig were rotated 180deg.

    Turning the stereo head upside-down swaps the cameras; flipping the two
    images back upright leaves a left-right mirrored pair with epipolar
    geometry (and disparity) intact.  The new left label sits at the
    mirrored position of the old right-image point.
    """
    w = crop.width
    labels = tuple(
        UVD((w - 1) - (l.u - l.d), l.v, l.d) for l in crop.labels
    )
    return StereoCrop(
        left=crop.right[:, ::-1].copy(),
        right=crop.left[:, ::-1].copy(),
        origin=crop.origin,
        labels=labels,
        right_offset=crop.right_offset,
    )


def _apply_homography(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    hom = np.column_stack((pts, np.ones(len(pts)))) @ h.T
    return hom[:, :2] / hom[:, 2:3]


def _warp_image(img: np.ndarray, h_inv: np.ndarray) -> np.ndarray:
    """Inverse-map warp with bilinear sampling, zero fill outside."""
    height, width = img.shape[:2]
    u, v = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    src = _apply_homography(h_inv, np.column_stack((u.ravel(), v.ravel())))
    su, sv = src[:, 0], src[:, 1]

    i0 = np.floor(su).astype(int)
    j0 = np.floor(sv).astype(int)
    fu = su - i0
    fv = sv - j0
    inside = (i0 >= 0) & (i0 < width - 1) & (j0 >= 0) & (j0 < height - 1)
    i0c = np.clip(i0, 0, width - 2)
    j0c = np.clip(j0, 0, height - 2)

    flat = img.reshape(height * width, -1).astype(float)
    idx = j0c * width + i0c
    w00 = ((1 - fu) * (1 - fv))[:, None]
    w01 = (fu * (1 - fv))[:, None]
    w10 = ((1 - fu) * fv)[:, None]
    w11 = (fu * fv)[:, None]
    out = w00 * flat[idx] + w01 * flat[idx + 1] + w10 * flat[idx + width] + w11 * flat[idx + width + 1]
    out[~inside] = 0.0
    out = out.reshape(img.shape if img.ndim == 3 else (height, width))
    return out.astype(img.dtype) if np.issubdtype(img.dtype, np.floating) else out


def rotate_about_x(crop: StereoCrop, intrinsics: CameraIntrinsics, angle_deg: float) -> StereoCrop:
    """Rotate the view around the camera X axis (the stereo baseline).

    Both cameras rotate identically, so corresponding points stay on the
    same row; the warp is the pure homography K R_x K^-1 in full-frame
    pixel coordinates, applied to each patch through its own crop origin.
    Label disparity is recomputed from the warped left and right positions.
    """
    if abs(angle_deg) > 5.0 + 1e-12:
        raise ValueError(f"rotation angle must be within [-5, 5] degrees, got {angle_deg}")
    if angle_deg == 0.0:
        return crop

    k = intrinsics.matrix()
    h_full = k @ rotation_about_x(np.radians(angle_deg)) @ np.linalg.inv(k)
    h_full_inv = np.linalg.inv(h_full)

    u0, v0 = crop.origin
    ur0 = u0 - crop.right_offset

    def crop_shift(h, du, dv):
        to_full = np.array([[1.0, 0.0, du], [0.0, 1.0, dv], [0.0, 0.0, 1.0]])
        from_full = np.array([[1.0, 0.0, -du], [0.0, 1.0, -dv], [0.0, 0.0, 1.0]])
        return from_full @ h @ to_full

    left = _warp_image(crop.left, crop_shift(h_full_inv, u0, v0))
    right = _warp_image(crop.right, crop_shift(h_full_inv, ur0, v0))

    labels = []
    for l in crop.labels:
        left_full = _apply_homography(h_full, [(l.u + u0, l.v + v0)])[0]
        right_full = _apply_homography(h_full, [((l.u - l.d) + ur0, l.v + v0)])[0]
        disparity_full = left_full[0] - right_full[0]
        labels.append(
            UVD(left_full[0] - u0, left_full[1] - v0, disparity_full - crop.right_offset)
        )
    return StereoCrop(
        left=left, right=right, origin=crop.origin, labels=tuple(labels),
        right_offset=crop.right_offset,
    )


@dataclass(frozen=True)
class PhotometricParams:
    hue_max_delta: float = 0.1
    saturation_bounds: tuple[float, float] = (0.6, 1.2)
    contrast_bounds: tuple[float, float] = (0.7, 1.2)
    brightness_max_delta: float = 32.0 / 255.0
    normalize_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    normalize_std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    dropout_enabled: bool = True

    def __post_init__(self):
        if self.hue_max_delta < 0 or self.brightness_max_delta < 0:
            raise ValueError("max deltas must be >= 0")
        for lo, hi in (self.saturation_bounds, self.contrast_bounds):
            if hi < lo:
                raise ValueError("bounds must be ordered")


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    c = maxc - minc
    v = maxc
    s = np.where(maxc > 0, c / np.maximum(maxc, 1e-20), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rc = (maxc - r) / c
        gc = (maxc - g) / c
        bc = (maxc - b) / c
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(c > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack((h, s, v), axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = [
        np.stack((v, t, p), axis=-1),
        np.stack((q, v, p), axis=-1),
        np.stack((p, v, t), axis=-1),
        np.stack((p, q, v), axis=-1),
        np.stack((t, p, v), axis=-1),
        np.stack((v, p, q), axis=-1),
    ]
    out = np.zeros(hsv.shape)
    for sector, rgb in enumerate(choices):
        mask = i == sector
        out[mask] = rgb[mask]
    return out


def _ellipse_mask(shape: tuple[int, int], center, axes, angle: float) -> np.ndarray:
    h, w = shape
    v, u = np.mgrid[0:h, 0:w].astype(float)
    du, dv = u - center[0], v - center[1]
    ca, sa = np.cos(angle), np.sin(angle)
    x = du * ca + dv * sa
    y = -du * sa + dv * ca
    return (x / axes[0]) ** 2 + (y / axes[1]) ** 2 <= 1.0


def photometric_augment(
    image: np.ndarray,
    params: PhotometricParams,
    seed: int | np.random.Generator,
) -> np.ndarray:
    """Randomized photometric chain; deterministic per seed, geometry untouched.

    Fixed order: hue, saturation, contrast, brightness, elliptical dropout,
    normalization.  Expects a float RGB image in [0, 1]; returns the
    mean/std-normalized float image.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.min() < 0 or img.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    if params.hue_max_delta > 0 or params.saturation_bounds != (1.0, 1.0):
        hsv = _rgb_to_hsv(img)
        if params.hue_max_delta > 0:
            hsv[..., 0] = (hsv[..., 0] + rng.uniform(-params.hue_max_delta, params.hue_max_delta)) % 1.0
        if params.saturation_bounds != (1.0, 1.0):
            hsv[..., 1] = np.clip(hsv[..., 1] * rng.uniform(*params.saturation_bounds), 0.0, 1.0)
        img = np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)

    if params.contrast_bounds != (1.0, 1.0):
        factor = rng.uniform(*params.contrast_bounds)
        mean = img.mean(axis=(0, 1), keepdims=True)
        img = np.clip((img - mean) * factor + mean, 0.0, 1.0)

    if params.brightness_max_delta > 0:
        img = np.clip(img + rng.uniform(-params.brightness_max_delta, params.brightness_max_delta), 0.0, 1.0)

    if params.dropout_enabled:
        for _ in range(int(rng.integers(0, 3))):
            center = (rng.uniform(0, img.shape[1]), rng.uniform(0, img.shape[0]))
            axes = (rng.uniform(5.0, 30.0), rng.uniform(5.0, 30.0))
            angle = rng.uniform(0.0, np.pi)
            color = rng.uniform(0.0, 1.0, size=3)
            img[_ellipse_mask(img.shape[:2], center, axes, angle)] = color

    mean = np.asarray(params.normalize_mean)
    std = np.asarray(params.normalize_std)
    return (img - mean) / std
