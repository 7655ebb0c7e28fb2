import { clampRectToPage, rectFromDrag } from "./geometry.js";
import type { Box } from "./types.js";

export interface CropperOptions {
  pageWidth: number;
  pageHeight: number;
  /** display zoom: on-screen pixels per page pixel */
  zoom: number;
  onSelect: (rect: Box) => void;
}

/**
 * Pointer-driven rectangle selection over a page view.
 *
 * Screen coordinates are divided by the display zoom so the selection is in
 * page pixels; the final rectangle is clamped to the page bounds before the
 * callback fires (drags wandering off the image are legal).
 */
export class Cropper {
  private dragStart: { x: number; y: number } | null = null;
  private readonly marquee: HTMLDivElement;

  constructor(
    private readonly surface: HTMLElement,
    private readonly options: CropperOptions,
  ) {
    this.marquee = surface.ownerDocument.createElement("div");
    this.marquee.className = "crop-marquee";
    this.marquee.style.position = "absolute";
    this.marquee.style.border = "1px solid #4ea8de";
    this.marquee.style.background = "rgba(78, 168, 222, 0.2)";
    this.marquee.style.display = "none";
    this.marquee.style.pointerEvents = "none";
    surface.appendChild(this.marquee);

    surface.addEventListener("pointerdown", this.onDown);
    surface.addEventListener("pointermove", this.onMove);
    surface.addEventListener("pointerup", this.onUp);
  }

  dispose(): void {
    this.surface.removeEventListener("pointerdown", this.onDown);
    this.surface.removeEventListener("pointermove", this.onMove);
    this.surface.removeEventListener("pointerup", this.onUp);
    this.marquee.remove();
  }

  private toLocal(ev: PointerEvent): { x: number; y: number } {
    const bounds = this.surface.getBoundingClientRect();
    return { x: ev.clientX - bounds.left, y: ev.clientY - bounds.top };
  }

  private onDown = (ev: PointerEvent): void => {
    this.dragStart = this.toLocal(ev);
    this.marquee.style.display = "block";
    this.updateMarquee(this.dragStart);
  };

  private onMove = (ev: PointerEvent): void => {
    if (this.dragStart) this.updateMarquee(this.toLocal(ev));
  };

  private onUp = (ev: PointerEvent): void => {
    if (!this.dragStart) return;
    const start = this.dragStart;
    const end = this.toLocal(ev);
    this.dragStart = null;
    this.marquee.style.display = "none";

    const zoom = this.options.zoom;
    const rect = rectFromDrag(
      start.x / zoom,
      start.y / zoom,
      end.x / zoom,
      end.y / zoom,
    );
    const clamped = clampRectToPage(
      rect,
      this.options.pageWidth,
      this.options.pageHeight,
    );
    if (clamped) this.options.onSelect(clamped);
  };

  private updateMarquee(current: { x: number; y: number }): void {
    if (!this.dragStart) return;
    const [left, top, w, h] = rectFromDrag(
      this.dragStart.x,
      this.dragStart.y,
      current.x,
      current.y,
    );
    this.marquee.style.left = `${left}px`;
    this.marquee.style.top = `${top}px`;
    this.marquee.style.width = `${w}px`;
    this.marquee.style.height = `${h}px`;
  }
}
