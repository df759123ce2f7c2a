/** Payload types mirroring the session service JSON API. */

export interface SessionSummary {
  session_id: string;
  n_frames: number;
  n_keypoints: number;
  n_annotations: number;
  qa_accepted: boolean | null;
}

export interface FrameInfo {
  frame_id: string;
  left: string;
  right: string;
  depth: string | null;
  has_pose: boolean;
}

export interface SessionDetail {
  session_id: string;
  n_keypoints: number;
  keyframes: number;
  qa_threshold_px: number;
  image_width: number;
  image_height: number;
  symmetry: number[][];
  frames: FrameInfo[];
}

export interface SelectResponse {
  k: number;
  frame_ids: string[];
}

export interface Annotation {
  frame_id: string;
  keypoint_id: number;
  u: number;
  v: number;
}

export interface AnnotationSet {
  annotations: Annotation[];
}

export interface KeypointOut {
  keypoint_id: number;
  position: number[];
  rmse: number;
  n_views: number;
}

export interface ResidualOut {
  frame_id: string;
  keypoint_id: number;
  residual_px: number;
}

export interface QaOut {
  accepted: boolean;
  worst_keypoint_id: number;
  worst_rmse: number;
  threshold_px: number;
}

export interface TriangulateResponse {
  keypoints: KeypointOut[];
  residuals: ResidualOut[];
  qa: QaOut;
  worst_frame_id: string | null;
}

export interface FrameLabels {
  flagged: boolean;
  uvd: (number[] | null)[];
}

export interface LabelsResponse {
  labels: Record<string, FrameLabels>;
}
