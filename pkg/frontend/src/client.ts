// Typed client for the control API. The app consumes only these
// endpoints; tests substitute a structural fake.

import type {
  DailyReportJson,
  EditCommand,
  EditResult,
  LayoutJson,
  MapSnapshot,
  StreamMessage,
  ViewState,
} from "./types.js";

export interface Api {
  getMap(): Promise<MapSnapshot>;
  getLayout(view: ViewState): Promise<LayoutJson>;
  postEdit(cmd: EditCommand): Promise<EditResult>;
  saveSession(path?: string): Promise<void>;
  loadSession(path: string): Promise<void>;
  dailyReport(date: string): Promise<DailyReportJson>;
  exportUrl(kind: "dot" | "svg"): string;
  subscribe(since: number, onMessage: (msg: StreamMessage) => void, onClose: () => void): () => void;
}

export class ApiClient implements Api {
  constructor(private baseUrl: string = "") {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.baseUrl + path, init);
    if (!resp.ok) {
      throw new Error(`${path} failed: ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  getMap(): Promise<MapSnapshot> {
    return this.json<MapSnapshot>("/api/map");
  }

  getLayout(view: ViewState): Promise<LayoutJson> {
    const params = new URLSearchParams({ level: view.level, mode: view.display_mode });
    if (view.depth !== null) {
      params.set("depth", String(view.depth));
    }
    return this.json<LayoutJson>(`/api/layout?${params}`);
  }

  async postEdit(cmd: EditCommand): Promise<EditResult> {
    const resp = await fetch(this.baseUrl + "/api/edit", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(cmd),
    });
    const body = await resp.json();
    if (resp.ok) {
      return { ok: true, delta: body };
    }
    return { ok: false, status: resp.status, error: body };
  }

  async saveSession(path?: string): Promise<void> {
    await this.json("/api/session/save", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(path ? { path } : {}),
    });
  }

  async loadSession(path: string): Promise<void> {
    await this.json("/api/session/load", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ path }),
    });
  }

  dailyReport(date: string): Promise<DailyReportJson> {
    return this.json<DailyReportJson>(`/api/reports/daily?date=${encodeURIComponent(date)}`);
  }

  exportUrl(kind: "dot" | "svg"): string {
    return `${this.baseUrl}/api/export.${kind}`;
  }

  /** Consume the line-delimited update stream; returns a cancel function. */
  subscribe(
    since: number,
    onMessage: (msg: StreamMessage) => void,
    onClose: () => void,
  ): () => void {
    const controller = new AbortController();
    (async () => {
      try {
        const resp = await fetch(`${this.baseUrl}/api/updates?since=${since}`, {
          signal: controller.signal,
        });
        if (!resp.ok || resp.body === null) {
          onClose();
          return;
        }
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        let buffer = "";
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          buffer += decoder.decode(value, { stream: true });
          for (const line of drainLines(buffer)) {
            onMessage(JSON.parse(line) as StreamMessage);
          }
          buffer = remainder(buffer);
        }
      } catch {
        // aborted or network drop; fall through to onClose
      }
      onClose();
    })();
    return () => controller.abort();
  }
}

export function drainLines(buffer: string): string[] {
  const lines = buffer.split("\n");
  lines.pop(); // partial tail (or empty string after a trailing newline)
  return lines.filter((l) => l.trim().length > 0);
}

export function remainder(buffer: string): string {
  const cut = buffer.lastIndexOf("\n");
  return cut === -1 ? buffer : buffer.slice(cut + 1);
}
