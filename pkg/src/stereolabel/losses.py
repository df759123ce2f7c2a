"""Training losses, the projection-loss curriculum, and heatmap decoding.

Keypoint sets are (N, 3) arrays of UVD rows.  All losses are plain
functions of numpy arrays so they can be checked against any training
stack; analytic gradients are provided for the two dominant loss terms so
consumers can verify their autodiff (or run without one).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BehindCameraError, InvalidDisparityError
from .geometry import CameraIntrinsics, RigidTransform, StereoRig, uvd_to_xyz_array

LOCALITY_SIGMA_PX = 10.0
LOCALITY_WEIGHT = 0.001
PROJECTION_WEIGHT_MAX = 2.5
CURRICULUM_START = 1.0 / 3.0
CURRICULUM_END = 2.0 / 3.0
DISPARITY_CLAMP_PX = 1e-3


@dataclass(frozen=True)
class SymmetrySpec:
    """Allowed permutations of keypoint indices (0-based), identity included.

    A permutation ``p`` relabels ground truth: keypoint i is compared
    against ``gt[p[i]]``.
    """

    permutations: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        perms = tuple(tuple(int(i) for i in p) for p in self.permutations)
        if not perms:
            raise ValueError("at least the identity permutation is required")
        n = len(perms[0])
        ident = tuple(range(n))
        for p in perms:
            if sorted(p) != list(range(n)):
                raise ValueError(f"{p} is not a permutation of 0..{n - 1}")
        if ident not in perms:
            raise ValueError("the identity permutation must be listed")
        object.__setattr__(self, "permutations", perms)

    @property
    def n_keypoints(self) -> int:
        return len(self.permutations[0])

    @staticmethod
    def identity(n: int) -> "SymmetrySpec":
        return SymmetrySpec((tuple(range(n)),))

    @staticmethod
    def with_swaps(n: int, *swaps: tuple[int, int]) -> "SymmetrySpec":
        """Identity plus one extra permutation exchanging the given index pairs."""
        perm = list(range(n))
        for a, b in swaps:
            perm[a], perm[b] = perm[b], perm[a]
        return SymmetrySpec((tuple(range(n)), tuple(perm)))


@dataclass(frozen=True)
class ViewProjection:
    """One widely-separated labeling view: left-camera->view pose + intrinsics."""

    pose: RigidTransform
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class Heatmaps:
    """Per-keypoint logit grids and disparity grids, shape (N, H, W)."""

    logits: np.ndarray
    disparity: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        disparity = np.asarray(self.disparity, dtype=float)
        if logits.ndim != 3 or logits.shape != disparity.shape:
            raise ValueError(
                f"logits {logits.shape} and disparity {disparity.shape} must both be (N, H, W)"
            )
        if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(disparity))):
            raise ValueError("heatmaps must be finite")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "disparity", disparity)


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"keypoint sets must share shape (N, 3), got {pred.shape} vs {gt.shape}")
    return pred, gt


def keypoint_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Squared UVD error summed over keypoints."""
    pred, gt = _check_pair(pred, gt)
    delta = pred - gt
    return float(np.sum(delta * delta))


def keypoint_loss_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred, gt = _check_pair(pred, gt)
    return 2.0 * (pred - gt)


def _clamp_disparity(uvd: np.ndarray) -> np.ndarray:
    out = uvd.copy()
    out[:, 2] = np.maximum(out[:, 2], DISPARITY_CLAMP_PX)
    return out


def _project_view(view: ViewProjection, pts: np.ndarray) -> np.ndarray:
    p = view.pose.apply(pts)
    z = p[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("keypoint behind a projection view")
    intr = view.intrinsics
    return np.column_stack((intr.fx * p[:, 0] / z + intr.cx, intr.fy * p[:, 1] / z + intr.cy))


def projection_loss(
    pred: np.ndarray, gt: np.ndarray, rig: StereoRig, views: Sequence[ViewProjection]
) -> float:
    """Squared pixel error between re-projections of predicted and true 3D points.

    Both UVD sets are lifted to 3D through the rig's reprojection map and
    pushed through every view.  Predicted disparities are clamped to a
    small positive floor so early-training garbage stays finite; ground
    truth must have valid (positive) disparities.
    """
    pred, gt = _check_pair(pred, gt)
    if np.any(gt[:, 2] <= 0):
        raise InvalidDisparityError("ground-truth disparities must be positive")
    p3 = uvd_to_xyz_array(rig, _clamp_disparity(pred))
    g3 = uvd_to_xyz_array(rig, gt)
    total = 0.0
    for view in views:
        delta = _project_view(view, p3) - _project_view(view, g3)
        total += float(np.sum(delta * delta))
    return total


def projection_loss_grad(
    pred: np.ndarray, gt: np.ndarray, rig: StereoRig, views: Sequence[ViewProjection]
) -> np.ndarray:
    """Analytic gradient of projection_loss with respect to the predicted UVD.

    Zero gradient flows through clamped disparities (the clamp region is
    flat), matching the subgradient of the forward computation.
    """
    pred, gt = _check_pair(pred, gt)
    clamped = _clamp_disparity(pred)
    p3 = uvd_to_xyz_array(rig, clamped)
    g3 = uvd_to_xyz_array(rig, gt)

    intr = rig.left
    x, y, z = p3[:, 0], p3[:, 1], p3[:, 2]
    d = clamped[:, 2]
    # dQ/d(u, v, d) for each keypoint
    jq = np.zeros((len(pred), 3, 3))
    jq[:, 0, 0] = z / intr.fx
    jq[:, 0, 2] = -x / d
    jq[:, 1, 1] = z / intr.fy
    jq[:, 1, 2] = -y / d
    jq[:, 2, 2] = -z / d
    clamped_mask = pred[:, 2] < DISPARITY_CLAMP_PX
    jq[clamped_mask, :, 2] = 0.0

    grad = np.zeros_like(pred)
    for view in views:
        pv = view.pose.apply(p3)
        zv = pv[:, 2]
        if np.any(zv <= 0):
            raise BehindCameraError("keypoint behind a projection view")
        residual = _project_view(view, p3) - _project_view(view, g3)
        vi = view.intrinsics
        a = np.zeros((len(pred), 2, 3))
        a[:, 0, 0] = vi.fx / zv
        a[:, 0, 2] = -vi.fx * pv[:, 0] / (zv * zv)
        a[:, 1, 1] = vi.fy / zv
        a[:, 1, 2] = -vi.fy * pv[:, 1] / (zv * zv)
        # chain:  d(pixel)/d(uvd) = A . R_view . dQ/d(uvd)
        j = a @ view.pose.rotation @ jq
        grad += 2.0 * np.einsum("ni,nij->nj", residual, j)
    return grad


def spatial_softmax(logits: np.ndarray) -> np.ndarray:
    """Per-keypoint softmax over the (H, W) grid; each map sums to 1."""
    logits = np.asarray(logits, dtype=float)
    flat = logits.reshape(logits.shape[0], -1)
    flat = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(flat)
    return (e / e.sum(axis=1, keepdims=True)).reshape(logits.shape)


def inverted_gaussian(shape: tuple[int, int], center_uv, sigma: float = LOCALITY_SIGMA_PX) -> np.ndarray:
    """Max-normalized inverted Gaussian: 0 at the labeled pixel, ->1 far away."""
    h, w = shape
    v, u = np.mgrid[0:h, 0:w].astype(float)
    d2 = (u - center_uv[0]) ** 2 + (v - center_uv[1]) ** 2
    gauss = np.exp(-d2 / (2.0 * sigma * sigma))
    return 1.0 - gauss / gauss.max()


def locality_loss(prob: np.ndarray, gt_uv: np.ndarray, sigma: float = LOCALITY_SIGMA_PX) -> float:
    """Penalty for probability mass far from the labeled keypoint position.

    ``prob`` is the (N, H, W) output of :func:`spatial_softmax`; each map's
    expectation of the inverted Gaussian around its label is summed over
    keypoints, so the total lies in [0, N].
    """
    prob = np.asarray(prob, dtype=float)
    gt_uv = np.asarray(gt_uv, dtype=float).reshape(-1, 2)
    if prob.ndim != 3 or len(prob) != len(gt_uv):
        raise ValueError("prob must be (N, H, W) with one label per map")
    total = 0.0
    for p, uv in zip(prob, gt_uv):
        total += float(np.sum(p * inverted_gaussian(p.shape, uv, sigma)))
    return total


def alpha_schedule(t: float) -> float:
    """Projection-loss weight curriculum over normalized training progress.

    Zero for the first third of training, then a linear ramp to the full
    weight by two thirds; keeps early re-projection gradients from blowing
    up before the UVD predictions stabilize.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"training fraction must be in [0, 1], got {t}")
    if t <= CURRICULUM_START:
        return 0.0
    if t >= CURRICULUM_END:
        return PROJECTION_WEIGHT_MAX
    return PROJECTION_WEIGHT_MAX * (t - CURRICULUM_START) / (CURRICULUM_END - CURRICULUM_START)


def total_loss(kp: float, proj: float, loc: float, t: float) -> float:
    """Weighted sum of the three losses at training fraction ``t``."""
    return kp + alpha_schedule(t) * proj + LOCALITY_WEIGHT * loc


def permutation_min(
    loss_fn: Callable[[np.ndarray, np.ndarray], float],
    pred: np.ndarray,
    gt: np.ndarray,
    sym: SymmetrySpec,
) -> tuple[float, tuple[int, ...]]:
    """Minimum loss over the allowed keypoint-id permutations of the labels.

    Ties keep the first permutation in listed order, so the result is
    deterministic.
    """
    pred, gt = _check_pair(pred, gt)
    best_value, best_perm = None, None
    for perm in sym.permutations:
        value = loss_fn(pred, gt[list(perm)])
        if best_value is None or value < best_value:
            best_value, best_perm = value, perm
    return float(best_value), best_perm


def integral_decode(maps: Heatmaps) -> np.ndarray:
    """Decode heatmaps to (N, 3) UVD by probability-weighted expectation.

    The spatial softmax of each logit grid gives a probability map; UV is
    its coordinate expectation and D the expectation of the disparity grid
    under the same probabilities.
    """
    prob = spatial_softmax(maps.logits)
    n, h, w = prob.shape
    us = np.arange(w, dtype=float)
    vs = np.arange(h, dtype=float)
    u = np.einsum("nhw,w->n", prob, us)
    v = np.einsum("nhw,h->n", prob, vs)
    d = np.einsum("nhw,nhw->n", prob, maps.disparity)
    return np.column_stack((u, v, d))
