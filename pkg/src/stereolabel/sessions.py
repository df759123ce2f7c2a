"""Durable scan-session storage and the end-to-end labeling pipeline.

A session is a directory of UTF-8 JSON files plus PNG images:

    session.json       manifest: rig, board, symmetry, frame index
    detections.json    per-frame fiducial corner detections (external input)
    annotations.json   human 2D keypoint clicks
    poses.json         per-frame pose estimates          (pipeline output)
    keypoints.json     triangulated 3D keypoints          (pipeline output)
    labels.json        propagated per-frame UVD labels    (pipeline output)
    qa.json            QA verdict                         (pipeline output)
    images/            8-bit PNG stereo pairs, 16-bit mm depth PNGs

All floats are serialized with 9 significant digits, keys are sorted, and
writes are atomic (temp file + rename), so identical inputs produce
byte-identical files on every platform.  Keypoint ids are 1-based in files
and APIs; symmetry permutations are stored 1-based to match.

One writer per session is enforced with a lock file; readers need no lock.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .board import FiducialBoard, PoseEstimate, TagDetections, estimate_camera_pose
from .errors import (
    InsufficientViewsError,
    PipelineError,
    SchemaError,
    SessionLockedError,
    StereoLabelError,
)
from .geometry import CameraIntrinsics, RigidTransform, StereoRig
from .labeling import (
    Annotation2D,
    DEFAULT_KEYFRAMES,
    FrameLabels,
    Keypoint3D,
    QA_THRESHOLD_PX as DEFAULT_QA_THRESHOLD_PX,
    QaResult,
    fps_select,
    propagate_labels,
    qa_gate,
    triangulate_keypoint,
)
from .losses import SymmetrySpec

SCHEMA_VERSION = 1
FLOAT_DIGITS = 9

MANIFEST = "session.json"
DETECTIONS = "detections.json"
ANNOTATIONS = "annotations.json"
POSES = "poses.json"
KEYPOINTS = "keypoints.json"
LABELS = "labels.json"
QA = "qa.json"
LOCK = ".lock"


# ---------------------------------------------------------------------------
# canonical JSON


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.{FLOAT_DIGITS}g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(f"{float(obj):.{FLOAT_DIGITS}g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    return obj


def canonical_json(obj) -> str:
    """Serialize with 9-significant-digit floats and sorted keys."""
    return json.dumps(_round_floats(obj), sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def atomic_write(path: Path, data: str | bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_text(data, encoding="utf-8")
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


@contextmanager
def session_lock(root: Path) -> Iterator[None]:
    """Exclusive writer lock for a session directory."""
    lock_path = root / LOCK
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise SessionLockedError(f"session {root} is locked by another writer") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# schema helpers


def _require(obj: Mapping, key: str, kind, path: str):
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing required field")
    val = obj[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise SchemaError(f"{path}.{key}", f"expected a number, got {type(val).__name__}")
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise SchemaError(f"{path}.{key}", f"expected an integer, got {type(val).__name__}")
        return val
    if not isinstance(val, kind):
        raise SchemaError(f"{path}.{key}", f"expected {kind.__name__}, got {type(val).__name__}")
    return val


def _load_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(path.name, f"invalid JSON: {e}") from e


def _check_version(doc: Mapping, fname: str) -> None:
    version = _require(doc, "schema_version", int, fname)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{fname}.schema_version", f"unsupported version {version}")


# ---------------------------------------------------------------------------
# domain <-> JSON


def intrinsics_to_dict(intr: CameraIntrinsics) -> dict:
    out = {
        "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
        "width": intr.width, "height": intr.height,
    }
    if intr.distortion:
        out["distortion"] = list(intr.distortion)
    return out


def intrinsics_from_dict(d: Mapping, path: str = "intrinsics") -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=_require(d, "fx", float, path),
        fy=_require(d, "fy", float, path),
        cx=_require(d, "cx", float, path),
        cy=_require(d, "cy", float, path),
        width=_require(d, "width", int, path),
        height=_require(d, "height", int, path),
        distortion=tuple(d.get("distortion", ())),
    )


def transform_to_dict(t: RigidTransform) -> dict:
    return {"rotation": t.rotation.tolist(), "translation": t.translation.tolist()}


def transform_from_dict(d: Mapping, path: str = "transform") -> RigidTransform:
    try:
        return RigidTransform(
            np.asarray(_require(d, "rotation", list, path), dtype=float),
            np.asarray(_require(d, "translation", list, path), dtype=float),
        )
    except ValueError as e:
        raise SchemaError(path, str(e)) from e


def rig_to_dict(rig: StereoRig) -> dict:
    intr = rig.left
    return {
        "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
        "width": intr.width, "height": intr.height, "baseline": rig.baseline,
    }


def rig_from_dict(d: Mapping, path: str = "rig") -> StereoRig:
    intr = CameraIntrinsics(
        fx=_require(d, "fx", float, path),
        fy=_require(d, "fy", float, path),
        cx=_require(d, "cx", float, path),
        cy=_require(d, "cy", float, path),
        width=_require(d, "width", int, path),
        height=_require(d, "height", int, path),
    )
    return StereoRig(left=intr, baseline=_require(d, "baseline", float, path))


def board_to_dict(board: FiducialBoard) -> dict:
    return {"tags": {str(i): board.tags[i][:, :2].tolist() for i in board.tag_ids}}


def board_from_dict(d: Mapping, path: str = "board") -> FiducialBoard:
    tags_raw = _require(d, "tags", dict, path)
    tags = {}
    for key, corners in tags_raw.items():
        try:
            tag_id = int(key)
        except ValueError:
            raise SchemaError(f"{path}.tags.{key}", "tag id must be an integer") from None
        arr = np.asarray(corners, dtype=float)
        if arr.shape != (4, 2):
            raise SchemaError(f"{path}.tags.{key}", f"expected 4x2 corners, got {arr.shape}")
        tags[tag_id] = arr
    try:
        return FiducialBoard(tags)
    except ValueError as e:
        raise SchemaError(f"{path}.tags", str(e)) from e


def pose_to_dict(est: PoseEstimate) -> dict:
    return {
        "rotation": est.pose.rotation.tolist(),
        "translation": est.pose.translation.tolist(),
        "rmse": est.rmse,
        "n_tags": est.n_tags,
    }


def pose_from_dict(d: Mapping, path: str) -> PoseEstimate:
    try:
        pose = RigidTransform(
            np.asarray(_require(d, "rotation", list, path), dtype=float),
            np.asarray(_require(d, "translation", list, path), dtype=float),
        )
    except ValueError as e:
        raise SchemaError(path, str(e)) from e
    return PoseEstimate(
        pose=pose, rmse=_require(d, "rmse", float, path), n_tags=_require(d, "n_tags", int, path)
    )


def sym_to_list(sym: SymmetrySpec) -> list:
    return [[i + 1 for i in perm] for perm in sym.permutations]


def sym_from_list(perms, n_keypoints: int, path: str = "symmetry") -> SymmetrySpec:
    if not isinstance(perms, list) or not perms:
        raise SchemaError(path, "expected a non-empty list of permutations")
    zero_based = []
    for idx, perm in enumerate(perms):
        if not isinstance(perm, list) or len(perm) != n_keypoints:
            raise SchemaError(f"{path}[{idx}]", f"expected a permutation of 1..{n_keypoints}")
        zero_based.append(tuple(int(i) - 1 for i in perm))
    try:
        return SymmetrySpec(tuple(zero_based))
    except ValueError as e:
        raise SchemaError(path, str(e)) from e


# ---------------------------------------------------------------------------
# session model


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    left: str                      # path relative to the session root
    right: str
    depth: str | None = None
    sha256: Mapping[str, str] = field(default_factory=dict)


@dataclass
class ScanSession:
    session_id: str
    rig: StereoRig
    board: FiducialBoard
    sym: SymmetrySpec
    frames: list[FrameRecord]
    detections: dict[str, TagDetections] = field(default_factory=dict)
    annotations: list[Annotation2D] = field(default_factory=list)
    poses: dict[str, PoseEstimate] = field(default_factory=dict)
    selected_frames: list[str] = field(default_factory=list)
    keypoints: list[Keypoint3D] = field(default_factory=list)
    labels: dict[str, FrameLabels] = field(default_factory=dict)
    qa: QaResult | None = None
    keyframes: int = DEFAULT_KEYFRAMES
    qa_threshold_px: float = DEFAULT_QA_THRESHOLD_PX
    root: Path | None = None

    @property
    def n_keypoints(self) -> int:
        return self.sym.n_keypoints

    @property
    def frame_ids(self) -> list[str]:
        return [f.frame_id for f in self.frames]

    def frame(self, frame_id: str) -> FrameRecord:
        for f in self.frames:
            if f.frame_id == frame_id:
                return f
        raise KeyError(frame_id)


# ---------------------------------------------------------------------------
# save


def save_session(session: ScanSession, path: str | Path) -> None:
    """Persist a session; lossless round-trip on canonical form.

    Image files referenced by frames are copied from the session's previous
    root when saving to a new directory.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(exist_ok=True)

    frames_json = []
    for f in session.frames:
        refs = {"left": f.left, "right": f.right}
        if f.depth:
            refs["depth"] = f.depth
        for ref in refs.values():
            target = root / ref
            if not target.exists() and session.root is not None and (session.root / ref).exists():
                target.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(session.root / ref, target)
        entry = {"frame_id": f.frame_id, "left": f.left, "right": f.right}
        if f.depth:
            entry["depth"] = f.depth
        entry["sha256"] = {
            name: _sha256(root / ref) for name, ref in refs.items() if (root / ref).exists()
        }
        frames_json.append(entry)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "session_id": session.session_id,
        "rig": rig_to_dict(session.rig),
        "board": board_to_dict(session.board),
        "n_keypoints": session.n_keypoints,
        "symmetry": sym_to_list(session.sym),
        "keyframes": session.keyframes,
        "qa_threshold_px": session.qa_threshold_px,
        "frames": frames_json,
    }
    atomic_write(root / MANIFEST, canonical_json(manifest))

    atomic_write(
        root / DETECTIONS,
        canonical_json(
            {
                "schema_version": SCHEMA_VERSION,
                "frames": {
                    fid: {str(t): det.tags[t].tolist() for t in det.tag_ids}
                    for fid, det in sorted(session.detections.items())
                },
            }
        ),
    )
    write_annotations(root, session.annotations)

    if session.poses:
        atomic_write(
            root / POSES,
            canonical_json(
                {
                    "schema_version": SCHEMA_VERSION,
                    "poses": {fid: pose_to_dict(p) for fid, p in sorted(session.poses.items())},
                }
            ),
        )
    if session.keypoints:
        atomic_write(root / KEYPOINTS, canonical_json(_keypoints_doc(session)))
    if session.labels:
        atomic_write(root / LABELS, canonical_json(_labels_doc(session)))
    if session.qa is not None:
        atomic_write(root / QA, canonical_json(_qa_doc(session.qa)))
    session.root = root


def write_annotations(root: Path, annotations: Sequence[Annotation2D]) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "annotations": [
            {"frame_id": a.frame_id, "keypoint_id": a.keypoint_id, "u": a.u, "v": a.v}
            for a in sorted(annotations, key=lambda a: (a.frame_id, a.keypoint_id))
        ],
    }
    atomic_write(root / ANNOTATIONS, canonical_json(doc))


def _keypoints_doc(session: ScanSession) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "selected_frames": list(session.selected_frames),
        "keypoints": [
            {
                "keypoint_id": kp.keypoint_id,
                "position": kp.position.tolist(),
                "rmse": kp.rmse,
                "n_views": kp.n_views,
            }
            for kp in session.keypoints
        ],
    }


def _labels_doc(session: ScanSession) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "labels": {
            fid: {
                "flagged": fl.flagged,
                "uvd": [None if l is None else [l.u, l.v, l.d] for l in fl.labels],
            }
            for fid, fl in sorted(session.labels.items())
        },
    }


def _qa_doc(qa: QaResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "accepted": qa.accepted,
        "worst_keypoint_id": qa.worst_keypoint_id,
        "worst_rmse": qa.worst_rmse,
        "threshold_px": qa.threshold_px,
    }


# ---------------------------------------------------------------------------
# load


def load_session(path: str | Path) -> ScanSession:
    """Load and validate a session directory.

    Raises SchemaError (with a dotted field path) on structural problems,
    missing referenced images, or checksum mismatches.
    """
    root = Path(path)
    manifest_path = root / MANIFEST
    if not manifest_path.exists():
        raise SchemaError(MANIFEST, f"missing in {root}")
    doc = _load_json(manifest_path)
    _check_version(doc, MANIFEST)

    session_id = _require(doc, "session_id", str, MANIFEST)
    rig = rig_from_dict(_require(doc, "rig", dict, MANIFEST), "session.rig")
    board = board_from_dict(_require(doc, "board", dict, MANIFEST), "session.board")
    n_keypoints = _require(doc, "n_keypoints", int, MANIFEST)
    sym = sym_from_list(doc.get("symmetry", [list(range(1, n_keypoints + 1))]), n_keypoints)
    keyframes = _require(doc, "keyframes", int, MANIFEST)
    qa_threshold = _require(doc, "qa_threshold_px", float, MANIFEST)

    frames = []
    seen_ids = set()
    for i, fdoc in enumerate(_require(doc, "frames", list, MANIFEST)):
        fpath = f"frames[{i}]"
        fid = _require(fdoc, "frame_id", str, fpath)
        if fid in seen_ids:
            raise SchemaError(f"{fpath}.frame_id", f"duplicate frame id {fid!r}")
        seen_ids.add(fid)
        record = FrameRecord(
            frame_id=fid,
            left=_require(fdoc, "left", str, fpath),
            right=_require(fdoc, "right", str, fpath),
            depth=fdoc.get("depth"),
            sha256=fdoc.get("sha256", {}),
        )
        refs = {"left": record.left, "right": record.right}
        if record.depth:
            refs["depth"] = record.depth
        for name, ref in refs.items():
            target = root / ref
            if not target.exists():
                raise SchemaError(f"{fpath}.{name}", f"referenced image {ref} is missing")
            recorded = record.sha256.get(name)
            if recorded and _sha256(target) != recorded:
                raise SchemaError(f"{fpath}.sha256.{name}", f"checksum mismatch for {ref}")
        frames.append(record)

    session = ScanSession(
        session_id=session_id, rig=rig, board=board, sym=sym, frames=frames,
        keyframes=keyframes, qa_threshold_px=qa_threshold, root=root,
    )

    det_path = root / DETECTIONS
    if det_path.exists():
        ddoc = _load_json(det_path)
        _check_version(ddoc, DETECTIONS)
        for fid, tags in _require(ddoc, "frames", dict, DETECTIONS).items():
            if fid not in seen_ids:
                raise SchemaError(f"detections.frames.{fid}", "unknown frame id")
            parsed = {}
            for key, corners in tags.items():
                try:
                    tag_id = int(key)
                except ValueError:
                    raise SchemaError(f"detections.frames.{fid}.{key}", "tag id must be an integer") from None
                if tag_id not in board.tags:
                    raise SchemaError(
                        f"detections.frames.{fid}.{key}", f"tag {tag_id} is not on the board"
                    )
                arr = np.asarray(corners, dtype=float)
                if arr.shape != (4, 2):
                    raise SchemaError(
                        f"detections.frames.{fid}.{key}", f"expected 4x2 corners, got {arr.shape}"
                    )
                parsed[tag_id] = arr
            session.detections[fid] = TagDetections(frame_id=fid, tags=parsed)

    ann_path = root / ANNOTATIONS
    if ann_path.exists():
        adoc = _load_json(ann_path)
        _check_version(adoc, ANNOTATIONS)
        session.annotations = parse_annotations(
            _require(adoc, "annotations", list, ANNOTATIONS), session
        )

    poses_path = root / POSES
    if poses_path.exists():
        pdoc = _load_json(poses_path)
        _check_version(pdoc, POSES)
        for fid, pose_doc in _require(pdoc, "poses", dict, POSES).items():
            if fid not in seen_ids:
                raise SchemaError(f"poses.{fid}", "unknown frame id")
            session.poses[fid] = pose_from_dict(pose_doc, f"poses.{fid}")

    kp_path = root / KEYPOINTS
    if kp_path.exists():
        kdoc = _load_json(kp_path)
        _check_version(kdoc, KEYPOINTS)
        session.selected_frames = list(kdoc.get("selected_frames", []))
        for i, kp_doc in enumerate(_require(kdoc, "keypoints", list, KEYPOINTS)):
            kpath = f"keypoints[{i}]"
            session.keypoints.append(
                Keypoint3D(
                    keypoint_id=_require(kp_doc, "keypoint_id", int, kpath),
                    position=np.asarray(_require(kp_doc, "position", list, kpath), dtype=float),
                    rmse=_require(kp_doc, "rmse", float, kpath),
                    n_views=_require(kp_doc, "n_views", int, kpath),
                )
            )

    labels_path = root / LABELS
    if labels_path.exists():
        if not session.keypoints:
            raise SchemaError(LABELS, "labels present without triangulated keypoints")
        ldoc = _load_json(labels_path)
        _check_version(ldoc, LABELS)
        from .geometry import UVD

        for fid, frame_doc in _require(ldoc, "labels", dict, LABELS).items():
            if fid not in seen_ids:
                raise SchemaError(f"labels.{fid}", "unknown frame id")
            uvd_rows = _require(frame_doc, "uvd", list, f"labels.{fid}")
            labels = tuple(
                None if row is None else UVD(float(row[0]), float(row[1]), float(row[2]))
                for row in uvd_rows
            )
            session.labels[fid] = FrameLabels(
                labels=labels, flagged=bool(frame_doc.get("flagged", False))
            )

    qa_path = root / QA
    if qa_path.exists():
        if not session.labels:
            raise SchemaError(QA, "qa verdict present without propagated labels")
        qdoc = _load_json(qa_path)
        _check_version(qdoc, QA)
        session.qa = QaResult(
            accepted=_require(qdoc, "accepted", bool, QA),
            worst_keypoint_id=_require(qdoc, "worst_keypoint_id", int, QA),
            worst_rmse=_require(qdoc, "worst_rmse", float, QA),
            threshold_px=_require(qdoc, "threshold_px", float, QA),
        )
    return session


def parse_annotations(rows: list, session: ScanSession, path: str = "annotations") -> list[Annotation2D]:
    """Validate raw annotation rows against a session (bounds, ids, duplicates)."""
    out = []
    seen = set()
    frame_ids = set(session.frame_ids)
    intr = session.rig.left
    for i, row in enumerate(rows):
        rpath = f"{path}[{i}]"
        fid = _require(row, "frame_id", str, rpath)
        kp_id = _require(row, "keypoint_id", int, rpath)
        u = _require(row, "u", float, rpath)
        v = _require(row, "v", float, rpath)
        if fid not in frame_ids:
            raise SchemaError(f"{rpath}.frame_id", f"unknown frame id {fid!r}")
        if not 1 <= kp_id <= session.n_keypoints:
            raise SchemaError(f"{rpath}.keypoint_id", f"keypoint id must be in 1..{session.n_keypoints}")
        if not (0 <= u < intr.width and 0 <= v < intr.height):
            raise SchemaError(f"{rpath}.u", f"annotation ({u}, {v}) outside the {intr.width}x{intr.height} frame")
        if (fid, kp_id) in seen:
            raise SchemaError(f"{rpath}", f"duplicate annotation for frame {fid!r} keypoint {kp_id}")
        seen.add((fid, kp_id))
        out.append(Annotation2D(frame_id=fid, keypoint_id=kp_id, u=u, v=v))
    return out


# ---------------------------------------------------------------------------
# pipeline


def estimate_poses_stage(session: ScanSession) -> dict[str, PoseEstimate]:
    frames_with_det = [f.frame_id for f in session.frames if f.frame_id in session.detections]
    coverage = len(frames_with_det) / max(len(session.frames), 1)
    if coverage < 0.9:
        raise PipelineError(
            "poses", f"detections cover only {coverage:.0%} of frames (needs >= 90%)"
        )
    poses = {}
    for fid in frames_with_det:
        try:
            poses[fid] = estimate_camera_pose(session.board, session.detections[fid], session.rig.left)
        except StereoLabelError as e:
            raise PipelineError("poses", f"frame {fid!r}: {e}") from e
    return poses


def select_stage(session: ScanSession) -> list[str]:
    posed = [fid for fid in session.frame_ids if fid in session.poses]
    k = min(session.keyframes, len(posed))
    if k < 1:
        raise PipelineError("select", "no posed frames to select from")
    idx = fps_select([session.poses[fid].pose for fid in posed], k)
    return [posed[i] for i in idx]


def triangulate_stage(session: ScanSession) -> list[Keypoint3D]:
    by_keypoint: dict[int, list[Annotation2D]] = {}
    for ann in session.annotations:
        by_keypoint.setdefault(ann.keypoint_id, []).append(ann)
    keypoints = []
    for kp_id in range(1, session.n_keypoints + 1):
        anns = [a for a in by_keypoint.get(kp_id, []) if a.frame_id in session.poses]
        if len(anns) < 2:
            raise InsufficientViewsError(
                f"keypoint {kp_id} has {len(anns)} annotated posed view(s); need >= 2"
            )
        views = [(session.poses[a.frame_id], session.rig.left, (a.u, a.v)) for a in anns]
        keypoints.append(triangulate_keypoint(views, keypoint_id=kp_id))
    return keypoints


def propagate_stage(session: ScanSession) -> dict[str, FrameLabels]:
    posed = [fid for fid in session.frame_ids if fid in session.poses]
    frames = [(session.poses[fid], session.rig) for fid in posed]
    return dict(zip(posed, propagate_labels(session.keypoints, frames)))


def run_pipeline(session: ScanSession, persist: bool = True) -> ScanSession:
    """Pose estimation -> keyframe selection -> triangulation -> propagation -> QA.

    Idempotent: re-running on unchanged inputs writes byte-identical
    outputs.  Stage failures surface as PipelineError with the stage name.
    """
    session.poses = estimate_poses_stage(session)
    try:
        session.selected_frames = select_stage(session)
    except StereoLabelError as e:
        raise PipelineError("select", str(e)) from e
    try:
        session.keypoints = triangulate_stage(session)
    except PipelineError:
        raise
    except StereoLabelError as e:
        raise PipelineError("triangulate", str(e)) from e
    try:
        session.labels = propagate_stage(session)
    except StereoLabelError as e:
        raise PipelineError("propagate", str(e)) from e
    session.qa = qa_gate(session.keypoints, session.qa_threshold_px)

    if persist:
        if session.root is None:
            raise PipelineError("persist", "session has no backing directory")
        with session_lock(session.root):
            atomic_write(
                session.root / POSES,
                canonical_json(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "poses": {fid: pose_to_dict(p) for fid, p in sorted(session.poses.items())},
                    }
                ),
            )
            atomic_write(session.root / KEYPOINTS, canonical_json(_keypoints_doc(session)))
            atomic_write(session.root / LABELS, canonical_json(_labels_doc(session)))
            atomic_write(session.root / QA, canonical_json(_qa_doc(session.qa)))
    return session


def annotation_residuals(session: ScanSession) -> list[dict]:
    """Pixel residual of each annotation against its triangulated keypoint."""
    from .geometry import project_points

    kp_by_id = {kp.keypoint_id: kp for kp in session.keypoints}
    out = []
    for ann in session.annotations:
        kp = kp_by_id.get(ann.keypoint_id)
        if kp is None or ann.frame_id not in session.poses:
            continue
        pose = session.poses[ann.frame_id].pose
        uv = project_points(session.rig.left, pose.apply(kp.position))[0]
        out.append(
            {
                "frame_id": ann.frame_id,
                "keypoint_id": ann.keypoint_id,
                "residual_px": float(np.hypot(uv[0] - ann.u, uv[1] - ann.v)),
            }
        )
    return out


def list_sessions(root: str | Path) -> list[str]:
    """Session ids (directory names) under a sessions root."""
    root = Path(root)
    if not root.exists():
        return []
    return sorted(p.name for p in root.iterdir() if (p / MANIFEST).exists())
