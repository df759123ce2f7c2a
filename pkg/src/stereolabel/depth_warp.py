"""Register depth images to the left stereo view.

A depth image captured by a separate device is undistorted, the temporally
closest stereo viewpoint is found, the depth->left transform is chained
through the shared world frame, and the depth is reprojected with
z-buffering.  Source pixels are bilinearly up-sampled 2x before projection
to fill quantization holes; interpolation is suppressed across depth
discontinuities so no geometry is invented between foreground and
background.

Depth convention: float meters in memory, 0 = invalid.  On disk: 16-bit
single-channel PNG, value = millimeters, 0 = invalid, stored bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    camera_center,
    distort_normalized,
    optical_axis,
    project_points,
)

DISCONTINUITY_M = 0.02  # no interpolation across steps larger than this
UPSAMPLE = 2


@dataclass(frozen=True)
class DepthImage:
    depth: np.ndarray  # (height, width) float meters, 0 = invalid
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=float)
        if d.ndim != 2:
            raise ValueError(f"depth must be 2D, got shape {d.shape}")
        if d.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"depth shape {d.shape} does not match intrinsics "
                f"({self.intrinsics.height}, {self.intrinsics.width})"
            )
        if not np.all(np.isfinite(d)):
            raise ValueError("depth values must be finite (0 marks invalid pixels)")
        if np.any(d < 0):
            raise ValueError("depth values must be non-negative")
        object.__setattr__(self, "depth", d)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth > 0


def undistort_depth(img: DepthImage) -> DepthImage:
    """Resample onto an ideal pinhole grid of the same size.

    Nearest-neighbor sampling: depth is never blended across pixels, and
    invalid pixels stay invalid.  With no distortion the image is returned
    bit-identical (distortion coefficients cleared).
    """
    intr = img.intrinsics
    if not intr.has_distortion:
        return DepthImage(img.depth.copy(), intr.without_distortion())

    u, v = np.meshgrid(np.arange(intr.width, dtype=float), np.arange(intr.height, dtype=float))
    xn = (u - intr.cx) / intr.fx
    yn = (v - intr.cy) / intr.fy
    xd, yd = distort_normalized(intr, xn, yn)
    src_u = np.rint(intr.fx * xd + intr.cx).astype(int)
    src_v = np.rint(intr.fy * yd + intr.cy).astype(int)

    out = np.zeros_like(img.depth)
    ok = (src_u >= 0) & (src_u < intr.width) & (src_v >= 0) & (src_v < intr.height)
    out[ok] = img.depth[src_v[ok], src_u[ok]]
    return DepthImage(out, intr.without_distortion())


def nearest_view(depth_pose: RigidTransform, candidates: Sequence[RigidTransform]) -> int:
    """Pick the candidate viewpoint closest to the depth camera.

    Proximity in both position and orientation is scored by two probe
    points 1 m ahead of and behind each camera along its optical axis; the
    candidate minimizing the summed probe distances wins (ties -> lowest
    index).
    """
    if len(candidates) == 0:
        raise ValueError("no candidate viewpoints")

    def probes(pose: RigidTransform) -> np.ndarray:
        c = camera_center(pose)
        axis = optical_axis(pose)
        return np.stack((c + axis, c - axis))

    ref = probes(depth_pose)
    scores = [float(np.linalg.norm(probes(p) - ref, axis=1).sum()) for p in candidates]
    return int(np.argmin(scores))


def chain_to_left(
    t_left_world: RigidTransform,
    t_rgb_world: RigidTransform,
    t_rgb_depth: RigidTransform,
) -> RigidTransform:
    """Depth->left-camera transform through the shared world frame.

    ``t_rgb_depth`` is the fixed factory extrinsic between the depth sensor
    and its RGB camera.
    """
    return t_left_world.compose(t_rgb_world.invert()).compose(t_rgb_depth)


def _upsampled_samples(img: DepthImage) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """2x bilinear up-sampling with discontinuity suppression.

    Returns flat (u, v, depth) arrays of valid samples.  Samples whose
    bilinear neighbors are not all valid, or whose neighbor depths spread
    more than the discontinuity threshold, fall back to the nearest valid
    pixel value instead of blending.
    """
    h, w = img.depth.shape
    us = np.linspace(0.0, w - 1.0, UPSAMPLE * (w - 1) + 1) if w > 1 else np.zeros(1)
    vs = np.linspace(0.0, h - 1.0, UPSAMPLE * (h - 1) + 1) if h > 1 else np.zeros(1)
    u, v = np.meshgrid(us, vs)
    u, v = u.ravel(), v.ravel()

    i0 = np.floor(u).astype(int)
    j0 = np.floor(v).astype(int)
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    fu = u - i0
    fv = v - j0

    d = img.depth
    d00, d01 = d[j0, i0], d[j0, i1]
    d10, d11 = d[j1, i0], d[j1, i1]
    stack = np.stack((d00, d01, d10, d11))
    all_valid = np.all(stack > 0, axis=0)
    spread_ok = (stack.max(axis=0) - stack.min(axis=0)) <= DISCONTINUITY_M

    bilinear = (
        d00 * (1 - fu) * (1 - fv)
        + d01 * fu * (1 - fv)
        + d10 * (1 - fu) * fv
        + d11 * fu * fv
    )
    nearest = d[np.rint(v).astype(int), np.rint(u).astype(int)]
    z = np.where(all_valid & spread_ok, bilinear, nearest)
    keep = z > 0
    return u[keep], v[keep], z[keep]


def warp_depth(img: DepthImage, t: RigidTransform, target: CameraIntrinsics) -> DepthImage:
    """Reproject a depth image into another camera with min-depth z-buffering.

    ``t`` maps source (depth-camera) coordinates to target coordinates.
    The input must already be undistorted; points landing behind the target
    camera are dropped.
    """
    if img.intrinsics.has_distortion:
        raise ValueError("warp_depth expects an undistorted depth image")

    u, v, z = _upsampled_samples(img)
    intr = img.intrinsics
    pts = np.column_stack(
        (
            (u - intr.cx) * z / intr.fx,
            (v - intr.cy) * z / intr.fy,
            z,
        )
    )
    pts = pts @ t.rotation.T + t.translation
    in_front = pts[:, 2] > 0
    pts = pts[in_front]

    uv = project_points(target, pts) if len(pts) else np.zeros((0, 2))
    ui = np.rint(uv[:, 0]).astype(int)
    vi = np.rint(uv[:, 1]).astype(int)
    ok = (ui >= 0) & (ui < target.width) & (vi >= 0) & (vi < target.height)

    zbuf = np.full((target.height, target.width), np.inf)
    np.minimum.at(zbuf, (vi[ok], ui[ok]), pts[ok, 2])
    zbuf[~np.isfinite(zbuf)] = 0.0
    return DepthImage(zbuf, target.without_distortion())


def load_depth_png(path: str | Path, intrinsics: CameraIntrinsics) -> DepthImage:
    """Load a 16-bit millimeter PNG as a metric DepthImage."""
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.dtype != np.uint16:
        raise ValueError(f"{path}: depth PNG must be 16-bit single channel, got {arr.dtype}")
    return DepthImage(arr.astype(float) / 1000.0, intrinsics)


def save_depth_png(img: DepthImage, path: str | Path) -> None:
    """Write depth as a 16-bit millimeter PNG (bit-exact for mm-quantized data)."""
    mm = img.depth * 1000.0
    rounded = np.rint(mm)
    if np.any(rounded > 65535):
        raise ValueError("depth exceeds the 65.535 m range of 16-bit millimeter PNGs")
    Image.fromarray(rounded.astype(np.uint16)).save(path)
