"""Rigid 6D pose from corresponded 3D keypoints (orthogonal Procrustes).

Aligns model-frame keypoints to observed keypoints over every allowed
symmetry permutation; the optimal rotation comes from an SVD of the
cross-covariance with a determinant correction that forbids reflections.
Rank-deficient keypoint sets (a bottle's two axis points) are flagged and
resolved with a deterministic roll convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, so3_exp
from .losses import SymmetrySpec

DEGENERACY_RATIO = 1e-9


@dataclass(frozen=True)
class KeypointModel:
    """Model-frame keypoint positions plus their symmetry permutations."""

    points: np.ndarray  # (N, 3) meters
    sym: SymmetrySpec

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(pts) < 1:
            raise ValueError("a keypoint model needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("model keypoints must be finite")
        if self.sym.n_keypoints != len(pts):
            raise ValueError(
                f"symmetry spec covers {self.sym.n_keypoints} keypoints, model has {len(pts)}"
            )
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class ProcrustesResult:
    transform: RigidTransform     # model frame -> observation frame
    rmsd_m: float
    permutation: tuple[int, ...]
    degenerate: bool


def _minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest-angle rotation mapping unit vector a onto unit vector b."""
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(a @ b)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # opposite directions: rotate pi about any axis orthogonal to a
        helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        axis = helper - (helper @ a) * a
        return so3_exp(axis / np.linalg.norm(axis) * np.pi)
    return so3_exp(axis / s * np.arctan2(s, c))


def _principal_axis(centered: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return vt[0]


def _kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[RigidTransform, float, bool]:
    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    src_c = src - src_mean
    dst_c = dst - dst_mean

    cov = src_c.T @ dst_c
    u, s, vt = np.linalg.svd(cov)
    degenerate = bool(s[0] <= 0 or s[-1] < DEGENERACY_RATIO * s[0])

    if s[0] <= 0:
        # coincident point sets: only the translation is determined
        rot = np.eye(3)
    elif s[1] < DEGENERACY_RATIO * s[0]:
        # collinear: align the principal axes with the smallest-angle
        # rotation; the roll about the axis is left at the identity-nearest
        # choice, which is exactly what the minimal rotation gives
        a = _principal_axis(src_c)
        b = _principal_axis(dst_c)
        if float((src_c @ a) @ (dst_c @ b)) < 0:
            b = -b
        rot = _minimal_rotation(a, b)
    else:
        d = np.sign(np.linalg.det(vt.T @ u.T))
        rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T

    t = dst_mean - rot @ src_mean
    rmsd = float(np.sqrt(np.mean(np.sum((src @ rot.T + t - dst) ** 2, axis=1))))
    return RigidTransform(rot, t), rmsd, degenerate


def procrustes_align(model: KeypointModel, observed: np.ndarray) -> ProcrustesResult:
    """Best rigid alignment of model keypoints onto observed keypoints.

    Evaluates every allowed permutation of the model's keypoint ids and
    returns the one with the lowest RMSD (first listed wins ties).  The
    returned rotation is always proper (det +1); the degeneracy flag marks
    rank-deficient keypoint covariance (collinear or coplanar sets).
    """
    observed = np.asarray(observed, dtype=float).reshape(-1, 3)
    if observed.shape != model.points.shape:
        raise ValueError(
            f"observed set shape {observed.shape} does not match model {model.points.shape}"
        )
    best: tuple | None = None
    for perm in model.sym.permutations:
        transform, rmsd, degenerate = _kabsch(model.points[list(perm)], observed)
        if best is None or rmsd < best[1]:
            best = (transform, rmsd, perm, degenerate)
    transform, rmsd, perm, degenerate = best
    return ProcrustesResult(
        transform=transform, rmsd_m=rmsd, permutation=perm, degenerate=degenerate
    )
