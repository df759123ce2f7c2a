/** Zoom/pan mapping between displayed (canvas) and image pixel coordinates.
 *
 * display = image * scale + offset, so the inverse is exact up to floating
 * point; the round-trip property is what the annotation flow depends on
 * (clicks at any zoom must store the true sub-pixel image position).
 */

export interface Viewport {
  scale: number;   // display pixels per image pixel, > 0
  offsetX: number; // display position of image pixel (0, 0)
  offsetY: number;
}

export interface Point {
  x: number;
  y: number;
}

export function identityViewport(): Viewport {
  return { scale: 1, offsetX: 0, offsetY: 0 };
}

export function displayToImage(vp: Viewport, display: Point): Point {
  return {
    x: (display.x - vp.offsetX) / vp.scale,
    y: (display.y - vp.offsetY) / vp.scale,
  };
}

export function imageToDisplay(vp: Viewport, image: Point): Point {
  return {
    x: image.x * vp.scale + vp.offsetX,
    y: image.y * vp.scale + vp.offsetY,
  };
}

/** Zoom by `factor` keeping the image point under `anchor` fixed on screen. */
export function zoomAt(vp: Viewport, anchor: Point, factor: number, minScale = 0.1, maxScale = 32): Viewport {
  const scale = Math.min(maxScale, Math.max(minScale, vp.scale * factor));
  const applied = scale / vp.scale;
  return {
    scale,
    offsetX: anchor.x - (anchor.x - vp.offsetX) * applied,
    offsetY: anchor.y - (anchor.y - vp.offsetY) * applied,
  };
}

export function pan(vp: Viewport, dx: number, dy: number): Viewport {
  return { ...vp, offsetX: vp.offsetX + dx, offsetY: vp.offsetY + dy };
}

/** Fit an image inside a canvas, centered, preserving aspect ratio. */
export function fitImage(
  canvasW: number,
  canvasH: number,
  imageW: number,
  imageH: number,
): Viewport {
  const scale = Math.min(canvasW / imageW, canvasH / imageH);
  return {
    scale,
    offsetX: (canvasW - imageW * scale) / 2,
    offsetY: (canvasH - imageH * scale) / 2,
  };
}
