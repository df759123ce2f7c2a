/** Typed client for the session service; every number shown in the UI
 * comes from these endpoints, never from local computation. */

import type {
  AnnotationSet,
  LabelsResponse,
  QaOut,
  SelectResponse,
  SessionDetail,
  SessionSummary,
  TriangulateResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (body.detail !== undefined) detail = JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class SessionApi {
  constructor(private base: string = "") {}

  listSessions(): Promise<SessionSummary[]> {
    return request(`${this.base}/sessions`);
  }

  getSession(sid: string): Promise<SessionDetail> {
    return request(`${this.base}/sessions/${encodeURIComponent(sid)}`);
  }

  selectFrames(sid: string, k: number): Promise<SelectResponse> {
    return request(`${this.base}/sessions/${encodeURIComponent(sid)}/select?k=${k}`);
  }

  frameImageUrl(sid: string, frameId: string, which: "left" | "right" | "depth" = "left"): string {
    return `${this.base}/sessions/${encodeURIComponent(sid)}/frames/${encodeURIComponent(frameId)}/${which}.png`;
  }

  getAnnotations(sid: string): Promise<AnnotationSet> {
    return request(`${this.base}/sessions/${encodeURIComponent(sid)}/annotations`);
  }

  putAnnotations(sid: string, payload: AnnotationSet): Promise<AnnotationSet> {
    return request(`${this.base}/sessions/${encodeURIComponent(sid)}/annotations`, {
      method: "PUT",
      body: JSON.stringify(payload),
    });
  }

  triangulate(sid: string): Promise<TriangulateResponse> {
    return request(`${this.base}/sessions/${encodeURIComponent(sid)}/triangulate`, {
      method: "POST",
    });
  }

  getLabels(sid: string): Promise<LabelsResponse> {
    return request(`${this.base}/sessions/${encodeURIComponent(sid)}/labels`);
  }

  getQa(sid: string): Promise<QaOut> {
    return request(`${this.base}/sessions/${encodeURIComponent(sid)}/qa`);
  }
}
