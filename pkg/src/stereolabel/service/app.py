"""HTTP session service backing the annotation frontend.

Wraps the session store and labeling pipeline behind a small JSON API.
All geometry lives server-side: the frontend only displays what these
endpoints return.  Mutating endpoints serialize through a per-session
in-process lock plus the on-disk writer lock, so concurrent writers get a
409 rather than interleaved files; reads never block.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles

from ..errors import (
    InsufficientViewsError,
    PipelineError,
    SchemaError,
    SessionLockedError,
    StereoLabelError,
)
from ..labeling import fps_select
from ..sessions import (
    ANNOTATIONS,
    KEYPOINTS,
    LABELS,
    QA,
    ScanSession,
    annotation_residuals,
    estimate_poses_stage,
    list_sessions,
    load_session,
    run_pipeline,
    write_annotations,
    session_lock,
    parse_annotations,
)
from . import schemas


def create_app(root: str | Path, ui_dir: str | Path | None = None) -> FastAPI:
    root = Path(root)
    app = FastAPI(title="stereolabel session service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    write_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    def get_session(sid: str) -> ScanSession:
        path = root / sid
        if not (path / "session.json").exists():
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
        try:
            return load_session(path)
        except SchemaError as e:
            raise HTTPException(status_code=500, detail=f"corrupt session {sid!r}: {e}") from e

    def ensure_poses(session: ScanSession) -> None:
        if not session.poses:
            try:
                session.poses = estimate_poses_stage(session)
            except (PipelineError, StereoLabelError) as e:
                raise HTTPException(status_code=422, detail=str(e)) from e

    @app.get("/sessions", response_model=list[schemas.SessionSummary])
    def sessions_index():
        out = []
        for sid in list_sessions(root):
            session = get_session(sid)
            out.append(
                schemas.SessionSummary(
                    session_id=sid,
                    n_frames=len(session.frames),
                    n_keypoints=session.n_keypoints,
                    n_annotations=len(session.annotations),
                    qa_accepted=None if session.qa is None else session.qa.accepted,
                )
            )
        return out

    @app.get("/sessions/{sid}", response_model=schemas.SessionDetail)
    def session_detail(sid: str):
        session = get_session(sid)
        return schemas.SessionDetail(
            session_id=session.session_id,
            n_keypoints=session.n_keypoints,
            keyframes=session.keyframes,
            qa_threshold_px=session.qa_threshold_px,
            image_width=session.rig.left.width,
            image_height=session.rig.left.height,
            symmetry=[[i + 1 for i in p] for p in session.sym.permutations],
            frames=[
                schemas.FrameInfo(
                    frame_id=f.frame_id,
                    left=f.left,
                    right=f.right,
                    depth=f.depth,
                    has_pose=f.frame_id in session.poses,
                )
                for f in session.frames
            ],
        )

    @app.get("/sessions/{sid}/frames/{fid}/{which}")
    def frame_image(sid: str, fid: str, which: str):
        if which not in ("left.png", "right.png", "depth.png"):
            raise HTTPException(status_code=404, detail=f"unknown image {which!r}")
        session = get_session(sid)
        try:
            record = session.frame(fid)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown frame {fid!r}") from None
        ref = {"left.png": record.left, "right.png": record.right, "depth.png": record.depth}[which]
        if ref is None or not (root / sid / ref).exists():
            raise HTTPException(status_code=404, detail=f"no {which} for frame {fid!r}")
        return FileResponse(root / sid / ref, media_type="image/png")

    @app.get("/sessions/{sid}/select", response_model=schemas.SelectResponse)
    def select_frames(sid: str, k: int = 6):
        session = get_session(sid)
        ensure_poses(session)
        posed = [fid for fid in session.frame_ids if fid in session.poses]
        if not 1 <= k <= len(posed):
            raise HTTPException(
                status_code=422, detail=f"k must be in 1..{len(posed)} for this session"
            )
        idx = fps_select([session.poses[fid].pose for fid in posed], k)
        return schemas.SelectResponse(k=k, frame_ids=[posed[i] for i in idx])

    @app.get("/sessions/{sid}/annotations", response_model=schemas.AnnotationSet)
    def get_annotations(sid: str):
        session = get_session(sid)
        return schemas.AnnotationSet(
            annotations=[
                schemas.AnnotationIn(frame_id=a.frame_id, keypoint_id=a.keypoint_id, u=a.u, v=a.v)
                for a in session.annotations
            ]
        )

    @app.put("/sessions/{sid}/annotations", response_model=schemas.AnnotationSet)
    def put_annotations(sid: str, payload: schemas.AnnotationSet):
        session = get_session(sid)
        rows = [a.model_dump() for a in payload.annotations]
        try:
            annotations = parse_annotations(rows, session)
        except SchemaError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        lock = write_locks[sid]
        if not lock.acquire(timeout=5.0):
            raise HTTPException(status_code=409, detail="another write is in progress")
        try:
            with session_lock(root / sid):
                write_annotations(root / sid, annotations)
                # downstream artifacts are stale once the clicks change
                for stale in (KEYPOINTS, LABELS, QA):
                    (root / sid / stale).unlink(missing_ok=True)
        except SessionLockedError as e:
            raise HTTPException(status_code=409, detail=str(e)) from e
        finally:
            lock.release()
        return get_annotations(sid)

    @app.post("/sessions/{sid}/triangulate", response_model=schemas.TriangulateResponse)
    def triangulate(sid: str):
        session = get_session(sid)
        if not session.annotations:
            raise HTTPException(status_code=422, detail="no annotations to triangulate")
        lock = write_locks[sid]
        if not lock.acquire(timeout=5.0):
            raise HTTPException(status_code=409, detail="another write is in progress")
        try:
            run_pipeline(session, persist=True)
        except SessionLockedError as e:
            raise HTTPException(status_code=409, detail=str(e)) from e
        except (InsufficientViewsError, PipelineError) as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        finally:
            lock.release()

        residuals = annotation_residuals(session)
        worst_frame = max(residuals, key=lambda r: r["residual_px"])["frame_id"] if residuals else None
        return schemas.TriangulateResponse(
            keypoints=[
                schemas.KeypointOut(
                    keypoint_id=kp.keypoint_id,
                    position=[float(x) for x in kp.position],
                    rmse=kp.rmse,
                    n_views=kp.n_views,
                )
                for kp in session.keypoints
            ],
            residuals=[schemas.ResidualOut(**r) for r in residuals],
            qa=schemas.QaOut(
                accepted=session.qa.accepted,
                worst_keypoint_id=session.qa.worst_keypoint_id,
                worst_rmse=session.qa.worst_rmse,
                threshold_px=session.qa.threshold_px,
            ),
            worst_frame_id=worst_frame,
        )

    @app.get("/sessions/{sid}/labels", response_model=schemas.LabelsResponse)
    def get_labels(sid: str):
        session = get_session(sid)
        if not session.labels:
            raise HTTPException(status_code=404, detail="labels not generated yet")
        return schemas.LabelsResponse(
            labels={
                fid: schemas.FrameLabelsOut(
                    flagged=fl.flagged,
                    uvd=[None if l is None else [l.u, l.v, l.d] for l in fl.labels],
                )
                for fid, fl in session.labels.items()
            }
        )

    @app.get("/sessions/{sid}/qa", response_model=schemas.QaOut)
    def get_qa(sid: str):
        session = get_session(sid)
        if session.qa is None:
            raise HTTPException(status_code=404, detail="qa verdict not available yet")
        return schemas.QaOut(
            accepted=session.qa.accepted,
            worst_keypoint_id=session.qa.worst_keypoint_id,
            worst_rmse=session.qa.worst_rmse,
            threshold_px=session.qa.threshold_px,
        )

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
