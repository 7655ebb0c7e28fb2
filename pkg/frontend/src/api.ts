import type { CropSelection, PageInfo, QueryResponse } from "./types.js";

/** Error carrying a user-presentable message; retryable means the service
 * may come back (network failure or 503). */
export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number | null,
    readonly retryable: boolean,
  ) {
    super(message);
  }
}

async function errorFromResponse(resp: Response): Promise<ApiError> {
  let detail = "";
  try {
    const body = await resp.json();
    detail = typeof body?.detail === "string" ? body.detail : "";
  } catch {
    // non-JSON error body; the status code carries enough
  }
  switch (resp.status) {
    case 400:
      return new ApiError(detail || "The crop request was rejected.", 400, false);
    case 404:
      return new ApiError(detail || "Unknown page.", 404, false);
    case 503:
      return new ApiError("The index is not loaded yet; try again shortly.", 503, true);
    default:
      return new ApiError(detail || `Request failed (${resp.status}).`, resp.status, false);
  }
}

function networkError(cause: unknown): ApiError {
  return new ApiError(
    `Cannot reach the service: ${cause instanceof Error ? cause.message : cause}`,
    null,
    true,
  );
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  pageImageUrl(pageId: string): string {
    return `${this.base}/pages/${encodeURIComponent(pageId)}/image`;
  }

  async getPages(signal?: AbortSignal): Promise<PageInfo[]> {
    let resp: Response;
    try {
      resp = await fetch(`${this.base}/pages`, { signal });
    } catch (cause) {
      if (cause instanceof DOMException && cause.name === "AbortError") throw cause;
      throw networkError(cause);
    }
    if (!resp.ok) throw await errorFromResponse(resp);
    const body = await resp.json();
    return body.pages as PageInfo[];
  }

  /** Submit a crop selection; the rect is sent exactly as given. */
  async submitQuery(
    selection: CropSelection,
    signal?: AbortSignal,
  ): Promise<QueryResponse> {
    let resp: Response;
    try {
      resp = await fetch(`${this.base}/queries`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          page_id: selection.page_id,
          rect: selection.rect,
        }),
        signal,
      });
    } catch (cause) {
      if (cause instanceof DOMException && cause.name === "AbortError") throw cause;
      throw networkError(cause);
    }
    if (!resp.ok) throw await errorFromResponse(resp);
    return (await resp.json()) as QueryResponse;
  }

  async getCachedQuery(queryId: string): Promise<QueryResponse> {
    let resp: Response;
    try {
      resp = await fetch(`${this.base}/queries/${encodeURIComponent(queryId)}`);
    } catch (cause) {
      throw networkError(cause);
    }
    if (!resp.ok) throw await errorFromResponse(resp);
    return (await resp.json()) as QueryResponse;
  }
}
