"""Pydantic request/response models for the annotation session service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class SessionSummary(BaseModel):
    session_id: str
    n_frames: int
    n_keypoints: int
    n_annotations: int
    qa_accepted: bool | None = None


class FrameInfo(BaseModel):
    frame_id: str
    left: str
    right: str
    depth: str | None = None
    has_pose: bool = False


class SessionDetail(BaseModel):
    session_id: str
    n_keypoints: int
    keyframes: int
    qa_threshold_px: float
    image_width: int
    image_height: int
    symmetry: list[list[int]]
    frames: list[FrameInfo]


class SelectResponse(BaseModel):
    k: int
    frame_ids: list[str]


class AnnotationIn(BaseModel):
    frame_id: str
    keypoint_id: int = Field(ge=1)
    u: float
    v: float


class AnnotationSet(BaseModel):
    annotations: list[AnnotationIn]


class KeypointOut(BaseModel):
    keypoint_id: int
    position: list[float]
    rmse: float
    n_views: int


class ResidualOut(BaseModel):
    frame_id: str
    keypoint_id: int
    residual_px: float


class QaOut(BaseModel):
    accepted: bool
    worst_keypoint_id: int
    worst_rmse: float
    threshold_px: float


class TriangulateResponse(BaseModel):
    keypoints: list[KeypointOut]
    residuals: list[ResidualOut]
    qa: QaOut
    worst_frame_id: str | None = None


class FrameLabelsOut(BaseModel):
    flagged: bool
    uvd: list[list[float] | None]


class LabelsResponse(BaseModel):
    labels: dict[str, FrameLabelsOut]
