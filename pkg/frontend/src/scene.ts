// SVG scene: a pure function of (layout, store, view state). Re-rendered
// whole per revision; pan/zoom lives in the viewBox so renders preserve it.

import { formatDwell, hostOf, MapStore } from "./store.js";
import type { LayoutJson, ViewState } from "./types.js";
import { ROOT_ID } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export interface SceneHandlers {
  onRecall(nodeId: number): void;
  onSelect(nodeId: number | null): void;
  onDropOnto(dragged: number, target: number): void;
  onEdgeSelect(edgeId: number): void;
}

export interface Scene {
  svg: SVGSVGElement;
  nodeCount: number;
  nodeIds: number[];
  focusNode(nodeId: number): void;
  elementFor(nodeId: number): SVGGElement | undefined;
  edgeElements: Map<number, SVGLineElement>;
}

export function renderScene(
  container: HTMLElement,
  layout: LayoutJson,
  store: MapStore,
  view: ViewState,
  handlers: SceneHandlers,
): Scene {
  container.textContent = "";
  const svg = document.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  const [bx, by, bw, bh] = layout.bounds;
  const pad = 24;
  svg.setAttribute("viewBox", `${bx - pad} ${by - pad} ${bw + 2 * pad} ${bh + 2 * pad}`);
  svg.setAttribute("role", "application");
  svg.setAttribute("aria-label", "navigation map");
  svg.classList.add("map-scene");

  const placements = new Map(layout.placements.map((p) => [p.id, p]));
  const center = (id: number) => {
    const p = placements.get(id)!;
    return { x: p.x + layout.node_w / 2, y: p.y + layout.node_h / 2 };
  };

  // edges under nodes; solid tree edges, dashed extras
  const edgeLayer = document.createElementNS(SVG_NS, "g");
  svg.appendChild(edgeLayer);
  for (const [from, to] of layout.tree_edges) {
    const p = placements.get(from);
    const c = placements.get(to);
    if (!p || !c) continue;
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(p.x + layout.node_w / 2));
    line.setAttribute("y1", String(p.y + layout.node_h));
    line.setAttribute("x2", String(c.x + layout.node_w / 2));
    line.setAttribute("y2", String(c.y));
    line.classList.add("edge-tree");
    edgeLayer.appendChild(line);
  }

  const edgeElements = new Map<number, SVGLineElement>();
  for (const [from, to] of layout.extra_edges) {
    if (!placements.has(from) || !placements.has(to)) continue;
    const a = center(from);
    const b = center(to);
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(a.x));
    line.setAttribute("y1", String(a.y));
    line.setAttribute("x2", String(b.x));
    line.setAttribute("y2", String(b.y));
    line.classList.add("edge-extra");
    const edge = findEdge(store, from, to);
    if (edge !== null) {
      line.dataset.edgeId = String(edge);
      line.addEventListener("click", (ev) => {
        ev.stopPropagation();
        handlers.onEdgeSelect(edge);
      });
      edgeElements.set(edge, line);
    }
    edgeLayer.appendChild(line);
  }

  // nodes in reading order (top to bottom, left to right) for keyboard walks
  const ordered = [...layout.placements].sort((a, b) => a.y - b.y || a.x - b.x);
  const nodeLayer = document.createElementNS(SVG_NS, "g");
  svg.appendChild(nodeLayer);
  const elements = new Map<number, SVGGElement>();
  let dragFrom: number | null = null;

  for (const p of ordered) {
    const node = store.node(p.id);
    const group = document.createElementNS(SVG_NS, "g") as SVGGElement;
    group.classList.add("node");
    group.dataset.nodeId = String(p.id);
    group.setAttribute("role", "button");
    group.setAttribute("tabindex", p.id === view.selection ? "0" : "-1");
    group.setAttribute("aria-label", ariaLabelFor(p.id, p.label, store));
    if (p.id === ROOT_ID) group.classList.add("root");
    if (p.id === store.current) group.classList.add("current");
    if (p.id === view.selection) group.classList.add("selected");
    if (node?.opaque) group.classList.add("opaque");

    const rect = document.createElementNS(SVG_NS, "rect");
    rect.setAttribute("x", String(p.x));
    rect.setAttribute("y", String(p.y));
    rect.setAttribute("width", String(layout.node_w));
    rect.setAttribute("height", String(layout.node_h));
    rect.setAttribute("rx", "6");
    group.appendChild(rect);

    const text = document.createElementNS(SVG_NS, "text");
    text.setAttribute("x", String(p.x + layout.node_w / 2));
    text.setAttribute("y", String(p.y + layout.node_h / 2 + 4));
    text.setAttribute("text-anchor", "middle");
    text.textContent = clip(displayLabel(p.id, p.label, store, view), 26);
    group.appendChild(text);

    const hidden = layout.badges[String(p.id)];
    if (hidden) {
      const badge = document.createElementNS(SVG_NS, "text");
      badge.setAttribute("x", String(p.x + layout.node_w - 4));
      badge.setAttribute("y", String(p.y + layout.node_h - 4));
      badge.setAttribute("text-anchor", "end");
      badge.classList.add("badge");
      badge.textContent = `${hidden} hidden`;
      group.appendChild(badge);
    }

    group.addEventListener("click", (ev) => {
      ev.stopPropagation();
      handlers.onSelect(p.id);
    });
    group.addEventListener("dblclick", (ev) => {
      ev.stopPropagation();
      handlers.onRecall(p.id);
    });
    group.addEventListener("mousedown", () => {
      dragFrom = p.id;
    });
    group.addEventListener("mouseup", () => {
      if (dragFrom !== null && dragFrom !== p.id) {
        handlers.onDropOnto(dragFrom, p.id);
      }
      dragFrom = null;
    });

    nodeLayer.appendChild(group);
    elements.set(p.id, group);
  }

  svg.addEventListener("click", () => handlers.onSelect(null));
  svg.addEventListener("mouseup", () => {
    dragFrom = null;
  });

  container.appendChild(svg);
  return {
    svg,
    nodeCount: layout.placements.length,
    nodeIds: ordered.map((p) => p.id),
    focusNode(nodeId: number) {
      const el = elements.get(nodeId);
      if (el) {
        for (const other of elements.values()) {
          other.setAttribute("tabindex", "-1");
        }
        el.setAttribute("tabindex", "0");
        el.focus();
      }
    },
    elementFor: (nodeId: number) => elements.get(nodeId),
    edgeElements,
  };
}

function findEdge(store: MapStore, from: number, to: number): number | null {
  for (const edge of store.edges.values()) {
    if (edge.from === from && edge.to === to) {
      return edge.id;
    }
  }
  return null;
}

function displayLabel(id: number, label: string, store: MapStore, view: ViewState): string {
  if (id === ROOT_ID) return "session";
  const node = store.node(id);
  if (view.display_mode === "thumbnail" && node && !node.thumbnail) {
    return placeholderGlyph(hostOf(node.url)) + " " + hostOf(node.url);
  }
  return label;
}

/** Deterministic placeholder for hosts without an attached thumbnail. */
export function placeholderGlyph(host: string): string {
  const glyphs = ["◆", "●", "■", "▲", "▼", "◈", "◉", "◎"];
  let hash = 0;
  for (const ch of host) {
    hash = (hash * 31 + ch.charCodeAt(0)) >>> 0;
  }
  return glyphs[hash % glyphs.length];
}

function ariaLabelFor(id: number, label: string, store: MapStore): string {
  if (id === ROOT_ID) return "session start";
  const node = store.node(id);
  if (!node) return label;
  const name = node.title || "untitled";
  const extra = node.opaque ? ", encrypted host" : "";
  return `${name}, ${node.visit_count} visits, ${formatDwell(node.dwell_seconds)}${extra}`;
}

function clip(text: string, n: number): string {
  return text.length > n ? text.slice(0, n - 1) + "…" : text;
}

/** Tooltip content per node; the root describes the session itself. */
export function tooltipFor(nodeId: number, store: MapStore): string {
  if (nodeId === ROOT_ID) {
    return `session ${store.sessionId || "(unsaved)"}\n${store.nodes.size} pages`;
  }
  const node = store.node(nodeId);
  if (!node) return "";
  if (node.opaque) {
    return `${hostOf(node.url)}  [encrypted]\nvisits: ${node.visit_count} · time: ${formatDwell(node.dwell_seconds)}`;
  }
  const title = node.title || "untitled";
  return `${title}\n${node.url}\nvisits: ${node.visit_count} · time: ${formatDwell(node.dwell_seconds)}`;
}
