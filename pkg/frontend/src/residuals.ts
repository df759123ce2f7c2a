/** Review-state model built from the service's triangulation response. */

import type { ResidualOut, TriangulateResponse } from "./types.js";

/** Residual color scale fixed to the 0..5 px QA gate so scans compare. */
export const RESIDUAL_SCALE_MAX_PX = 5;

export function residualColor(residualPx: number): string {
  const t = Math.min(Math.max(residualPx / RESIDUAL_SCALE_MAX_PX, 0), 1);
  // green (small) -> yellow -> red (at or beyond the gate)
  const hue = 120 * (1 - t);
  return `hsl(${hue.toFixed(0)}, 85%, 45%)`;
}

export interface ResidualView {
  byFrame: Map<string, ResidualOut[]>;
  perKeypointRmse: Map<number, number>;
  accepted: boolean;
  thresholdPx: number;
  worstFrameId: string | null;
}

export function buildResidualView(response: TriangulateResponse): ResidualView {
  const byFrame = new Map<string, ResidualOut[]>();
  for (const r of response.residuals) {
    const list = byFrame.get(r.frame_id) ?? [];
    list.push(r);
    byFrame.set(r.frame_id, list);
  }
  const perKeypointRmse = new Map<number, number>();
  for (const kp of response.keypoints) perKeypointRmse.set(kp.keypoint_id, kp.rmse);
  return {
    byFrame,
    perKeypointRmse,
    accepted: response.qa.accepted,
    thresholdPx: response.qa.threshold_px,
    worstFrameId: response.worst_frame_id,
  };
}
