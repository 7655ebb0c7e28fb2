import type { Box } from "./types.js";

/** Normalized rectangle from two drag corners, any drag direction. */
export function rectFromDrag(
  x0: number,
  y0: number,
  x1: number,
  y1: number,
): Box {
  const left = Math.min(x0, x1);
  const top = Math.min(y0, y1);
  return [left, top, Math.abs(x1 - x0), Math.abs(y1 - y0)];
}

/**
 * Clamp a crop rectangle to the page bounds. Returns null when nothing of
 * the rectangle remains inside the page (zero-area selections included).
 */
export function clampRectToPage(
  rect: Box,
  pageWidth: number,
  pageHeight: number,
): Box | null {
  const [x0, y0, w, h] = rect;
  const left = Math.max(0, Math.min(Math.round(x0), pageWidth));
  const top = Math.max(0, Math.min(Math.round(y0), pageHeight));
  const right = Math.max(0, Math.min(Math.round(x0 + w), pageWidth));
  const bottom = Math.max(0, Math.min(Math.round(y0 + h), pageHeight));
  const width = right - left;
  const height = bottom - top;
  if (width < 1 || height < 1) return null;
  return [left, top, width, height];
}

export interface OverlayStyle {
  left: number;
  top: number;
  width: number;
  height: number;
}

/**
 * Pixel placement of a detection box overlay. Exactly the API coordinates
 * at zoom 1; display zoom is the only scaling ever applied.
 */
export function overlayStyle(box: Box, zoom = 1): OverlayStyle {
  return {
    left: box[0] * zoom,
    top: box[1] * zoom,
    width: box[2] * zoom,
    height: box[3] * zoom,
  };
}
