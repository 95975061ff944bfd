/**
 * Canvas overlay for detections: boxes in image pixel coordinates scaled to
 * the display, score labels to three decimals, stroke opacity tracking the
 * score. Drawing goes through a narrow context interface so tests can
 * substitute a call recorder for a real canvas.
 */
import { Detection } from "./api.js";

export const LINE_WIDTH = 2;

/** The 2D-context subset the overlay uses. */
export interface DrawContext {
  lineWidth: number;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  font: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

export interface DisplayBox {
  x: number;
  y: number;
  w: number;
  h: number;
}

/** Stroke color whose opacity scales with the detection score. */
export function boxColor(score: number): string {
  const clamped = Math.min(Math.max(score, 0), 1);
  const alpha = 0.35 + 0.65 * clamped;
  return `rgba(255, 84, 40, ${alpha.toFixed(3)})`;
}

/** Scale an image-coordinate box to display pixels, inset by half the line
 * width so boxes at the image border render fully visible. */
export function toDisplayBox(
  box: [number, number, number, number],
  imageSize: number,
  displaySize: number,
): DisplayBox {
  const s = displaySize / imageSize;
  const half = LINE_WIDTH / 2;
  const clamp = (v: number) => Math.min(Math.max(v, half), displaySize - half);
  const x1 = clamp(box[0] * s);
  const y1 = clamp(box[1] * s);
  const x2 = Math.max(clamp(box[2] * s), x1);
  const y2 = Math.max(clamp(box[3] * s), y1);
  return { x: x1, y: y1, w: x2 - x1, h: y2 - y1 };
}

export function drawOverlay(
  ctx: DrawContext,
  detections: Detection[],
  imageSize: number,
  displaySize: number,
): void {
  ctx.clearRect(0, 0, displaySize, displaySize);
  ctx.lineWidth = LINE_WIDTH;
  ctx.font = "12px system-ui, sans-serif";
  for (const d of detections) {
    const b = toDisplayBox(d.box, imageSize, displaySize);
    const color = boxColor(d.score);
    ctx.strokeStyle = color;
    ctx.strokeRect(b.x, b.y, b.w, b.h);
    ctx.fillStyle = color;
    // label sits above the box, nudged below the top edge when there is no room
    const ty = b.y >= 16 ? b.y - 4 : b.y + 12;
    ctx.fillText(d.score.toFixed(3), b.x + 2, ty);
  }
}

/** Highest-scoring detection whose display box contains the point, for the
 * hover tooltip; null when the point is over none. */
export function hitTest(
  detections: Detection[],
  imageSize: number,
  displaySize: number,
  x: number,
  y: number,
): Detection | null {
  let best: Detection | null = null;
  for (const d of detections) {
    const b = toDisplayBox(d.box, imageSize, displaySize);
    const inside = x >= b.x && x <= b.x + b.w && y >= b.y && y <= b.y + b.h;
    if (inside && (best === null || d.score > best.score)) {
      best = d;
    }
  }
  return best;
}
