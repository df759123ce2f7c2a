/** Annotation app: keyboard-first click-through labeling of the FPS-selected
 * frames, server-side triangulation, and residual review on every frame.
 *
 * The UI never computes geometry; all residuals, selections and verdicts
 * come from the session service.
 */

import { ApiError, SessionApi } from "./api.js";
import { AnnotationDraft, clearDraft, persistDraft, restoreDraft } from "./draft.js";
import { RESIDUAL_SCALE_MAX_PX, ResidualView, buildResidualView, residualColor } from "./residuals.js";
import type { SessionDetail } from "./types.js";
import {
  Viewport,
  displayToImage,
  fitImage,
  imageToDisplay,
  pan,
  zoomAt,
} from "./viewport.js";

const KEYPOINT_COLORS = ["#dc2828", "#e6c81e", "#28b43c", "#325ae6", "#aa3cc8"];

function colorOf(keypointId: number): string {
  return KEYPOINT_COLORS[(keypointId - 1) % KEYPOINT_COLORS.length] ?? "#888";
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class AnnotatorApp {
  private api = new SessionApi("");
  private detail: SessionDetail | null = null;
  private selected: string[] = [];
  private draft: AnnotationDraft | null = null;
  private review: ResidualView | null = null;
  private currentFrame: string | null = null;
  private activeKeypoint = 1;
  private viewport: Viewport = { scale: 1, offsetX: 0, offsetY: 0 };
  private image = new Image();
  private imageReady = false;
  private panning: { x: number; y: number } | null = null;

  private canvas = el<HTMLCanvasElement>("canvas");
  private ctx = this.canvas.getContext("2d")!;

  async start(): Promise<void> {
    const sessions = await this.api.listSessions();
    const picker = el<HTMLSelectElement>("session-picker");
    picker.innerHTML = "";
    for (const s of sessions) {
      const option = document.createElement("option");
      option.value = s.session_id;
      option.textContent = `${s.session_id} (${s.n_frames} frames)`;
      picker.appendChild(option);
    }
    picker.onchange = () => void this.openSession(picker.value);
    const fromUrl = new URLSearchParams(location.search).get("session");
    const first = fromUrl ?? sessions[0]?.session_id;
    if (first === undefined) {
      this.setStatus("no sessions available; create one and reload", "warn");
      return;
    }
    picker.value = first;
    await this.openSession(first);
    this.bindEvents();
  }

  private async openSession(sid: string): Promise<void> {
    this.detail = await this.api.getSession(sid);
    this.review = null;
    this.draft = new AnnotationDraft(sid);
    const restored = restoreDraft(this.draft, localStorage);
    if (!restored) {
      try {
        const server = await this.api.getAnnotations(sid);
        this.draft.load(server.annotations);
      } catch {
        // a fresh session may legitimately have no annotation file yet
      }
    }
    const k = Math.min(this.detail.keyframes, this.detail.frames.length);
    try {
      this.selected = (await this.api.selectFrames(sid, k)).frame_ids;
    } catch (err) {
      this.selected = [];
      this.setStatus(`frame selection failed: ${(err as Error).message}`, "warn");
    }
    this.renderPalette();
    this.renderGallery();
    this.renderFrameList();
    if (this.selected.length > 0) this.focusFrame(this.selected[0]!);
    this.updateButtons();
    this.setStatus(
      restored ? "restored unsaved draft from this browser" : `opened ${sid}`,
      "info",
    );
  }

  private bindEvents(): void {
    el<HTMLButtonElement>("save").onclick = () => void this.save();
    el<HTMLButtonElement>("triangulate").onclick = () => void this.triangulateAndReview();
    el<HTMLButtonElement>("undo").onclick = () => this.undo();

    this.canvas.addEventListener("mousedown", (e) => {
      if (e.button === 1 || e.shiftKey) {
        this.panning = { x: e.offsetX, y: e.offsetY };
        e.preventDefault();
        return;
      }
      if (e.button === 0) this.placeAt(e.offsetX, e.offsetY);
    });
    this.canvas.addEventListener("mousemove", (e) => {
      if (this.panning) {
        this.viewport = pan(this.viewport, e.offsetX - this.panning.x, e.offsetY - this.panning.y);
        this.panning = { x: e.offsetX, y: e.offsetY };
        this.draw();
      }
    });
    window.addEventListener("mouseup", () => (this.panning = null));
    this.canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      const factor = e.deltaY < 0 ? 1.2 : 1 / 1.2;
      this.viewport = zoomAt(this.viewport, { x: e.offsetX, y: e.offsetY }, factor);
      this.draw();
    });

    window.addEventListener("keydown", (e) => {
      if (e.target instanceof HTMLInputElement || e.target instanceof HTMLSelectElement) return;
      const n = this.detail?.n_keypoints ?? 0;
      if (/^[1-9]$/.test(e.key) && Number(e.key) <= n) {
        this.activeKeypoint = Number(e.key);
        this.renderPalette();
        this.draw();
      } else if (e.key === " ") {
        e.preventDefault();
        this.advanceFrame();
      } else if (e.key === "u" || ((e.ctrlKey || e.metaKey) && e.key === "z")) {
        e.preventDefault();
        this.undo();
      }
    });
  }

  private placeAt(displayX: number, displayY: number): void {
    if (!this.draft || !this.detail || this.currentFrame === null) return;
    const image = displayToImage(this.viewport, { x: displayX, y: displayY });
    if (
      image.x < 0 || image.x >= this.detail.image_width ||
      image.y < 0 || image.y >= this.detail.image_height
    ) {
      this.setStatus("click is outside the image", "warn");
      return;
    }
    this.draft.place(this.currentFrame, this.activeKeypoint, image.x, image.y);
    persistDraft(this.draft, localStorage);
    this.renderFrameList();
    this.updateButtons();
    this.draw();
    if (this.activeKeypoint < this.detail.n_keypoints) {
      this.activeKeypoint += 1;  // advance to the next keypoint for fast flows
      this.renderPalette();
    }
  }

  private undo(): void {
    if (!this.draft) return;
    if (this.draft.undo()) {
      persistDraft(this.draft, localStorage);
      this.renderFrameList();
      this.updateButtons();
      this.draw();
      this.setStatus("undid last edit", "info");
    }
  }

  private async save(): Promise<void> {
    if (!this.draft) return;
    try {
      await this.api.putAnnotations(this.draft.sessionId, {
        annotations: this.draft.annotations,
      });
      this.draft.markSaved();
      clearDraft(this.draft.sessionId, localStorage);
      this.setStatus("annotations saved", "info");
    } catch (err) {
      this.setStatus(`save failed: ${(err as Error).message}`, "error");
    }
    this.updateButtons();
  }

  private async triangulateAndReview(): Promise<void> {
    if (!this.draft || !this.detail) return;
    await this.save();
    try {
      const response = await this.api.triangulate(this.draft.sessionId);
      this.review = buildResidualView(response);
      const verdict = this.review.accepted
        ? `QA accept (worst keypoint rmse ${response.qa.worst_rmse.toFixed(2)} px)`
        : `QA REJECT: keypoint ${response.qa.worst_keypoint_id} rmse ` +
          `${response.qa.worst_rmse.toFixed(2)} px > ${response.qa.threshold_px} px`;
      this.setStatus(verdict, this.review.accepted ? "ok" : "error");
      if (this.review.worstFrameId !== null) this.focusFrame(this.review.worstFrameId);
      this.renderFrameList();
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.setStatus(`cannot triangulate yet: ${err.detail}`, "warn");
      } else {
        this.setStatus(`triangulation failed: ${(err as Error).message}`, "error");
      }
    }
  }

  private advanceFrame(): void {
    if (this.currentFrame === null || this.selected.length === 0) return;
    const idx = this.selected.indexOf(this.currentFrame);
    this.focusFrame(this.selected[(idx + 1) % this.selected.length]!);
  }

  private focusFrame(frameId: string): void {
    if (!this.detail || !this.draft) return;
    this.currentFrame = frameId;
    this.imageReady = false;
    this.image = new Image();
    this.image.onload = () => {
      this.imageReady = true;
      this.viewport = fitImage(
        this.canvas.width, this.canvas.height, this.image.width, this.image.height,
      );
      this.draw();
    };
    this.image.src = this.api.frameImageUrl(this.draft.sessionId, frameId, "left");
    this.renderGallery();
    this.renderFrameList();
    this.draw();
  }

  private draw(): void {
    const { ctx, canvas } = this;
    ctx.fillStyle = "#181a1f";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    if (!this.imageReady || !this.draft || this.currentFrame === null) return;
    ctx.save();
    ctx.imageSmoothingEnabled = this.viewport.scale < 3;
    ctx.translate(this.viewport.offsetX, this.viewport.offsetY);
    ctx.scale(this.viewport.scale, this.viewport.scale);
    ctx.drawImage(this.image, 0, 0);
    ctx.restore();

    for (const ann of this.draft.forFrame(this.currentFrame)) {
      const p = imageToDisplay(this.viewport, { x: ann.u, y: ann.v });
      const residual = this.review?.byFrame
        .get(this.currentFrame)
        ?.find((r) => r.keypoint_id === ann.keypoint_id);
      this.drawMarker(p.x, p.y, ann.keypoint_id, residual?.residual_px);
    }
    el<HTMLSpanElement>("frame-label").textContent =
      `frame ${this.currentFrame} | keypoint ${this.activeKeypoint} ` +
      `| zoom ${this.viewport.scale.toFixed(2)}x`;
  }

  private drawMarker(x: number, y: number, keypointId: number, residualPx?: number): void {
    const { ctx } = this;
    ctx.strokeStyle = colorOf(keypointId);
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(x - 9, y);
    ctx.lineTo(x + 9, y);
    ctx.moveTo(x, y - 9);
    ctx.lineTo(x, y + 9);
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(x, y, 5, 0, Math.PI * 2);
    ctx.stroke();
    ctx.fillStyle = colorOf(keypointId);
    ctx.font = "12px system-ui";
    ctx.fillText(String(keypointId), x + 8, y - 8);
    if (residualPx !== undefined) {
      ctx.fillStyle = residualColor(residualPx);
      ctx.fillText(`${residualPx.toFixed(2)} px`, x + 8, y + 16);
    }
  }

  private renderPalette(): void {
    if (!this.detail) return;
    const palette = el<HTMLDivElement>("palette");
    palette.innerHTML = "";
    for (let id = 1; id <= this.detail.n_keypoints; id++) {
      const chip = document.createElement("button");
      chip.className = "chip" + (id === this.activeKeypoint ? " active" : "");
      chip.style.borderColor = colorOf(id);
      const rmse = this.review?.perKeypointRmse.get(id);
      chip.textContent = rmse === undefined ? `${id}` : `${id} (${rmse.toFixed(2)} px)`;
      chip.onclick = () => {
        this.activeKeypoint = id;
        this.renderPalette();
        this.draw();
      };
      palette.appendChild(chip);
    }
  }

  private renderGallery(): void {
    if (!this.draft) return;
    const gallery = el<HTMLDivElement>("gallery");
    gallery.innerHTML = "";
    for (const fid of this.selected) {
      const cell = document.createElement("div");
      cell.className = "thumb" + (fid === this.currentFrame ? " focused" : "");
      const img = document.createElement("img");
      img.src = this.api.frameImageUrl(this.draft.sessionId, fid, "left");
      img.alt = `frame ${fid}`;
      const tag = document.createElement("span");
      tag.textContent = fid;
      cell.append(img, tag);
      cell.onclick = () => this.focusFrame(fid);
      gallery.appendChild(cell);
    }
  }

  private renderFrameList(): void {
    if (!this.detail || !this.draft) return;
    const list = el<HTMLUListElement>("frames");
    list.innerHTML = "";
    for (const fid of this.selected) {
      const item = document.createElement("li");
      if (fid === this.currentFrame) item.className = "focused";
      const done = this.draft.forFrame(fid).length;
      let residualNote = "";
      const rs = this.review?.byFrame.get(fid);
      if (rs && rs.length > 0) {
        const worst = Math.max(...rs.map((r) => r.residual_px));
        residualNote = ` worst ${worst.toFixed(2)} px`;
        item.style.color = residualColor(worst);
      }
      item.textContent = `${fid}: ${done}/${this.detail.n_keypoints}${residualNote}`;
      item.onclick = () => this.focusFrame(fid);
      list.appendChild(item);
    }
  }

  private updateButtons(): void {
    if (!this.detail || !this.draft) return;
    const triangulate = el<HTMLButtonElement>("triangulate");
    const ready = Array.from(
      { length: this.detail.n_keypoints },
      (_, i) => this.draft!.views(i + 1),
    ).every((v) => v >= 2);
    triangulate.disabled = !ready;
    triangulate.title = ready
      ? "triangulate and review residuals"
      : "each keypoint needs clicks in at least two frames";
    el<HTMLButtonElement>("save").disabled = !this.draft.dirty;
  }

  private setStatus(text: string, kind: "info" | "ok" | "warn" | "error"): void {
    const status = el<HTMLDivElement>("status");
    status.textContent = text;
    status.dataset.kind = kind;
  }
}

declare global {
  interface Window {
    __residualScaleMaxPx: number;
  }
}
window.__residualScaleMaxPx = RESIDUAL_SCALE_MAX_PX;

new AnnotatorApp().start().catch((err) => {
  document.getElementById("status")!.textContent = `failed to start: ${err}`;
});
