// Single configuration knob: where the engine's HTTP API lives.
// Priority: explicit global (set by index.html), then the value persisted
// for the session, then same-origin.

declare global {
  interface Window {
    PSPOT_API_BASE?: string;
  }
}

const STORAGE_KEY = "pspot.apiBase";

export function apiBase(): string {
  if (typeof window !== "undefined") {
    if (window.PSPOT_API_BASE !== undefined) return window.PSPOT_API_BASE;
    const stored = window.sessionStorage?.getItem(STORAGE_KEY);
    if (stored !== null && stored !== undefined) return stored;
  }
  return "";
}

export function setApiBase(base: string): void {
  window.sessionStorage?.setItem(STORAGE_KEY, base);
}
