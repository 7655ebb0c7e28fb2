import { ApiClient, ApiError } from "./api.js";
import { Cropper } from "./cropper.js";
import { renderDetections } from "./overlay.js";
import type { Box, Detection, PageInfo, QueryResponse } from "./types.js";

const THUMB_WIDTH = 160;

export class App {
  private pages = new Map<string, PageInfo>();
  private inflight: AbortController | null = null;
  private cropper: Cropper | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {}

  async start(): Promise<void> {
    const doc = this.root.ownerDocument;
    this.root.innerHTML = `
      <header class="topbar">
        <h1>pspot</h1>
        <span class="hint">pick a page, drag a rectangle, find its lookalikes</span>
      </header>
      <div id="banner" class="banner" hidden></div>
      <main>
        <section id="thumbs" class="thumbs"></section>
        <section id="viewer" class="viewer" hidden>
          <h2 id="viewer-title"></h2>
          <div id="viewer-stage" class="stage"></div>
        </section>
        <section id="results" class="results" hidden>
          <h2>results</h2>
          <div id="results-grid" class="results-grid"></div>
        </section>
      </main>`;
    void doc;
    await this.loadPages();
  }

  private banner(): HTMLElement {
    return this.root.querySelector("#banner") as HTMLElement;
  }

  showError(err: unknown, retry?: () => void): void {
    const banner = this.banner();
    banner.hidden = false;
    banner.textContent =
      err instanceof ApiError ? err.message : `Unexpected error: ${err}`;
    banner.dataset.retryable = String(err instanceof ApiError && err.retryable);
    if (retry && err instanceof ApiError && err.retryable) {
      const button = banner.ownerDocument.createElement("button");
      button.textContent = "retry";
      button.addEventListener("click", () => {
        this.clearError();
        retry();
      });
      banner.appendChild(button);
    }
  }

  clearError(): void {
    const banner = this.banner();
    banner.hidden = true;
    banner.textContent = "";
  }

  async loadPages(): Promise<void> {
    let pages: PageInfo[];
    try {
      pages = await this.api.getPages();
    } catch (err) {
      this.showError(err, () => void this.loadPages());
      return;
    }
    this.clearError();
    this.pages = new Map(pages.map((p) => [p.page_id, p]));
    const grid = this.root.querySelector("#thumbs") as HTMLElement;
    grid.innerHTML = "";
    for (const page of pages) {
      const card = grid.ownerDocument.createElement("figure");
      card.className = "thumb";
      card.dataset.pageId = page.page_id;
      const img = grid.ownerDocument.createElement("img");
      img.src = this.api.pageImageUrl(page.page_id);
      img.width = THUMB_WIDTH;
      img.alt = page.page_id;
      const caption = grid.ownerDocument.createElement("figcaption");
      caption.textContent = page.page_id;
      card.append(img, caption);
      card.addEventListener("click", () => this.openPage(page.page_id));
      grid.appendChild(card);
    }
  }

  /** Open a page in the viewer at 1:1 zoom and arm the crop tool. */
  openPage(pageId: string): void {
    const page = this.pages.get(pageId);
    if (!page) return;
    const viewer = this.root.querySelector("#viewer") as HTMLElement;
    const stage = this.root.querySelector("#viewer-stage") as HTMLElement;
    const title = this.root.querySelector("#viewer-title") as HTMLElement;
    viewer.hidden = false;
    title.textContent = pageId;
    stage.innerHTML = "";
    stage.style.position = "relative";
    stage.style.width = `${page.width}px`;
    stage.style.height = `${page.height}px`;

    const img = stage.ownerDocument.createElement("img");
    img.src = this.api.pageImageUrl(pageId);
    img.width = page.width;
    img.height = page.height;
    img.draggable = false;
    stage.appendChild(img);

    this.cropper?.dispose();
    this.cropper = new Cropper(stage, {
      pageWidth: page.width,
      pageHeight: page.height,
      zoom: 1,
      onSelect: (rect) => void this.submit(pageId, rect),
    });
  }

  /**
   * Submit a crop. Only one query is in flight per tab: a new submission
   * aborts the previous one, whose render is then cancelled.
   */
  async submit(pageId: string, rect: Box): Promise<QueryResponse | null> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.clearError();
    let response: QueryResponse;
    try {
      response = await this.api.submitQuery(
        { page_id: pageId, rect },
        controller.signal,
      );
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") return null;
      this.showError(err, () => void this.submit(pageId, rect));
      return null;
    }
    if (controller.signal.aborted) return null; // superseded; drop the render
    this.renderResults(response);
    return response;
  }

  renderResults(response: QueryResponse): void {
    const section = this.root.querySelector("#results") as HTMLElement;
    const grid = this.root.querySelector("#results-grid") as HTMLElement;
    section.hidden = false;
    grid.innerHTML = "";
    const byPage = new Map<string, Detection[]>();
    for (const det of response.detections) {
      const list = byPage.get(det.page_id) ?? [];
      list.push(det);
      byPage.set(det.page_id, list);
    }
    for (const hit of response.pages) {
      const page = this.pages.get(hit.page_id);
      if (!page) continue;
      const card = grid.ownerDocument.createElement("div");
      card.className = "result-card";
      card.dataset.pageId = hit.page_id;

      const frame = grid.ownerDocument.createElement("div");
      frame.className = "result-frame";
      frame.style.position = "relative";
      frame.style.width = `${page.width}px`;
      frame.style.height = `${page.height}px`;
      const img = grid.ownerDocument.createElement("img");
      img.src = this.api.pageImageUrl(hit.page_id);
      img.width = page.width;
      img.height = page.height;
      img.draggable = false;
      frame.appendChild(img);
      renderDetections(frame, byPage.get(hit.page_id) ?? [], 1);

      const caption = grid.ownerDocument.createElement("div");
      caption.className = "result-caption";
      caption.textContent = `${hit.page_id} — score ${hit.score.toFixed(4)}`;

      // clicking a result opens it in the viewer for a follow-up crop
      card.addEventListener("click", () => this.openPage(hit.page_id));
      card.append(frame, caption);
      grid.appendChild(card);
    }
  }
}

export function bootstrap(root: HTMLElement, base: string): App {
  const app = new App(root, new ApiClient(base));
  void app.start();
  return app;
}
