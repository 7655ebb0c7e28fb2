import { overlayStyle } from "./geometry.js";
import type { Box, Detection } from "./types.js";

export type OverlayKind = "system" | "ground-truth";

/**
 * Absolutely positioned box overlay. The element's pixel geometry is the
 * API box scaled only by the display zoom; data attributes keep the raw
 * page coordinates inspectable.
 */
export function overlayElement(
  doc: Document,
  box: Box,
  kind: OverlayKind,
  zoom = 1,
  label?: string,
): HTMLDivElement {
  const el = doc.createElement("div");
  const style = overlayStyle(box, zoom);
  el.className = `overlay overlay-${kind}`;
  el.style.position = "absolute";
  el.style.left = `${style.left}px`;
  el.style.top = `${style.top}px`;
  el.style.width = `${style.width}px`;
  el.style.height = `${style.height}px`;
  el.style.boxSizing = "border-box";
  el.style.pointerEvents = "none";
  el.style.border = kind === "system" ? "2px solid #f5c518" : "2px dashed #e5383b";
  el.dataset.x0 = String(box[0]);
  el.dataset.y0 = String(box[1]);
  el.dataset.w = String(box[2]);
  el.dataset.h = String(box[3]);
  if (label !== undefined) {
    const tag = doc.createElement("span");
    tag.className = "overlay-label";
    tag.textContent = label;
    el.appendChild(tag);
  }
  return el;
}

/** Draw one page's detections (score order) into an overlay container. */
export function renderDetections(
  container: HTMLElement,
  detections: Detection[],
  zoom = 1,
): void {
  const doc = container.ownerDocument;
  container.querySelectorAll(".overlay-system").forEach((el) => el.remove());
  for (const det of [...detections].sort((a, b) => b.score - a.score)) {
    container.appendChild(
      overlayElement(doc, det.box, "system", zoom, `#${det.rank}`),
    );
  }
}

/** Draw ground-truth boxes (dashed, distinguishable from system boxes). */
export function renderGroundTruth(
  container: HTMLElement,
  boxes: Box[],
  zoom = 1,
): void {
  const doc = container.ownerDocument;
  container.querySelectorAll(".overlay-ground-truth").forEach((el) => el.remove());
  for (const box of boxes) {
    container.appendChild(overlayElement(doc, box, "ground-truth", zoom));
  }
}
