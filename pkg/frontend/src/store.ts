// Client-side mirror of the session map, advanced only by
// server-confirmed deltas. Optimistic updates are deliberately
// impossible: there is no mutation API besides loadSnapshot/applyDelta.

import type { DeltaMessage, EdgeJson, MapSnapshot, NodeJson } from "./types.js";

export type ApplyResult = "applied" | "gap" | "stale";

export class MapStore {
  sessionId = "";
  revision = -1;
  current: number | null = null;
  nodes = new Map<number, NodeJson>();
  edges = new Map<number, EdgeJson>();

  loadSnapshot(snap: MapSnapshot): void {
    this.sessionId = snap.session_id;
    this.revision = snap.revision;
    this.current = snap.current;
    this.nodes = new Map(snap.nodes.map((n) => [n.id, n]));
    this.edges = new Map(snap.edges.map((e) => [e.id, e]));
  }

  /** Apply one delta; reports a gap instead of rendering inconsistently. */
  applyDelta(delta: DeltaMessage): ApplyResult {
    if (delta.revision <= this.revision) {
      return "stale"; // replay of something already folded in
    }
    if (delta.revision !== this.revision + 1) {
      return "gap";
    }
    for (const node of delta.nodes) {
      this.nodes.set(node.id, node);
    }
    for (const edge of delta.edges) {
      this.edges.set(edge.id, edge);
    }
    for (const id of delta.removed_edges) {
      this.edges.delete(id);
    }
    for (const id of delta.removed_nodes) {
      this.nodes.delete(id);
    }
    this.current = delta.current;
    this.revision = delta.revision;
    return "applied";
  }

  node(id: number): NodeJson | undefined {
    return this.nodes.get(id);
  }

  edgesTouching(nodeId: number): EdgeJson[] {
    const out: EdgeJson[] = [];
    for (const edge of this.edges.values()) {
      if (edge.from === nodeId || edge.to === nodeId) {
        out.push(edge);
      }
    }
    return out.sort((a, b) => a.id - b.id);
  }
}

export function hostOf(url: string): string {
  try {
    return new URL(url).hostname;
  } catch {
    return url;
  }
}

export function formatDwell(seconds: number): string {
  const total = Math.round(seconds);
  const h = Math.floor(total / 3600);
  const m = Math.floor((total % 3600) / 60);
  const s = total % 60;
  if (h > 0) return `${h}h${String(m).padStart(2, "0")}m`;
  if (m > 0) return `${m}m${String(s).padStart(2, "0")}s`;
  return `${s}s`;
}
