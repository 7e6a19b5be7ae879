// Application wiring: stream consumption, view state, toolbar, keyboard
// model, edit gestures, tooltips. Renders only server-confirmed state:
// every mutation goes to the API and the scene advances when the
// corresponding delta arrives on the update stream.

import type { Api } from "./client.js";
import { renderScene, Scene, tooltipFor } from "./scene.js";
import { MapStore } from "./store.js";
import type {
  DeltaMessage,
  EditCommand,
  StreamMessage,
  ViewState,
} from "./types.js";
import { ROOT_ID } from "./types.js";

export interface AppOptions {
  openUrl?: (url: string) => void;
  confirm?: (message: string) => boolean;
}

type PendingLink = { op: "add_link" | "reparent"; from: number } | null;

export class App {
  store = new MapStore();
  view: ViewState = {
    level: "page",
    depth: null,
    display_mode: "title",
    selection: null,
    revision: -1,
  };
  scene: Scene | null = null;
  selectedEdge: number | null = null;
  pendingLink: PendingLink = null;

  private openUrl: (url: string) => void;
  private confirmFn: (message: string) => boolean;
  private mapEl!: HTMLElement;
  private statusEl!: HTMLElement;
  private tooltipEl!: HTMLElement;
  private cancelStream: (() => void) | null = null;
  private refreshing: Promise<void> = Promise.resolve();

  constructor(
    private root: HTMLElement,
    private api: Api,
    options: AppOptions = {},
  ) {
    this.openUrl = options.openUrl ?? ((url) => window.open(url, "_blank"));
    this.confirmFn = options.confirm ?? ((message) => window.confirm(message));
  }

  async init(): Promise<void> {
    this.buildShell();
    await this.resync();
    this.subscribe();
  }

  // -- layout/shell --

  private buildShell(): void {
    this.root.textContent = "";
    this.root.classList.add("wayfinder");

    const toolbar = el("div", "toolbar");
    toolbar.setAttribute("role", "toolbar");
    toolbar.setAttribute("aria-label", "map controls");

    const levelSelect = select("level", ["page", "host"], (value) => {
      this.view.level = value as ViewState["level"];
      void this.refresh();
    });
    const modeSelect = select("labels", ["title", "url", "thumbnail"], (value) => {
      this.view.display_mode = value as ViewState["display_mode"];
      void this.refresh();
    });
    const depthInput = document.createElement("input");
    depthInput.type = "number";
    depthInput.min = "1";
    depthInput.placeholder = "depth";
    depthInput.setAttribute("aria-label", "depth limit");
    depthInput.addEventListener("change", () => {
      const value = parseInt(depthInput.value, 10);
      this.view.depth = Number.isFinite(value) && value >= 1 ? value : null;
      void this.refresh();
    });

    const saveBtn = button("save session", async () => {
      try {
        await this.api.saveSession();
        this.status("session saved");
      } catch (err) {
        this.status(`save failed: ${String(err)}`);
      }
    });
    const reportBtn = button("today's report", async () => {
      const today = new Date().toISOString().slice(0, 10);
      try {
        const report = await this.api.dailyReport(today);
        const lines = report.per_site.map(
          (s) => `${s.host}: ${s.visit_count} visits, ${Math.round(s.dwell_seconds)}s`,
        );
        this.status(lines.length ? lines.join(" | ") : "no visits today");
      } catch (err) {
        this.status(`report failed: ${String(err)}`);
      }
    });
    const dotLink = anchor("export DOT", this.api.exportUrl("dot"));
    const svgLink = anchor("export SVG", this.api.exportUrl("svg"));

    toolbar.append(
      labeled("level", levelSelect),
      labeled("labels", modeSelect),
      labeled("depth", depthInput),
      saveBtn,
      reportBtn,
      dotLink,
      svgLink,
    );

    this.mapEl = el("div", "map-container");
    this.mapEl.tabIndex = 0;
    this.mapEl.setAttribute("aria-label", "navigation map; arrow keys move, Enter recalls");
    this.mapEl.addEventListener("keydown", (ev) => this.onKeyDown(ev));
    this.mapEl.addEventListener("mouseover", (ev) => this.onHover(ev));
    this.mapEl.addEventListener("mousemove", (ev) => this.moveTooltip(ev));
    this.mapEl.addEventListener("mouseout", () => this.hideTooltip());
    this.mapEl.addEventListener("focusin", (ev) => this.onHover(ev));

    this.statusEl = el("div", "status");
    this.statusEl.setAttribute("role", "status");
    this.statusEl.setAttribute("aria-live", "polite");

    this.tooltipEl = el("div", "tooltip");
    this.tooltipEl.hidden = true;

    const help = el("div", "help");
    help.textContent =
      "arrows: move · Enter: open page · L: link · R: reparent · " +
      "E: cycle edges · Delete: remove · Esc: cancel · double-click opens";

    this.root.append(toolbar, this.mapEl, this.statusEl, help, this.tooltipEl);
  }

  // -- data flow --

  private subscribe(): void {
    this.cancelStream = this.api.subscribe(
      this.store.revision,
      (msg) => void this.handleStreamMessage(msg),
      () => this.status("update stream closed; reload the page to reconnect"),
    );
  }

  async handleStreamMessage(msg: StreamMessage): Promise<void> {
    if (msg.type === "heartbeat") {
      return;
    }
    if (msg.type === "snapshot") {
      this.store.loadSnapshot(msg);
      await this.refresh();
      return;
    }
    if (msg.type === "reset") {
      await this.resync();
      return;
    }
    const result = this.store.applyDelta(msg as DeltaMessage);
    if (result === "gap") {
      await this.resync(); // never render across a hole in the stream
    } else if (result === "applied") {
      await this.refresh();
    }
  }

  /** Full refetch: the only recovery from gaps, resets, and load/save swaps. */
  async resync(): Promise<void> {
    const snap = await this.api.getMap();
    this.store.loadSnapshot(snap);
    await this.refresh();
  }

  refresh(): Promise<void> {
    // serialize renders; a delta burst must not interleave layout fetches
    this.refreshing = this.refreshing.then(() => this.renderOnce());
    return this.refreshing;
  }

  private async renderOnce(): Promise<void> {
    if (this.view.selection !== null && !this.store.nodes.has(this.view.selection)) {
      this.view.selection = null;
    }
    if (this.selectedEdge !== null && !this.store.edges.has(this.selectedEdge)) {
      this.selectedEdge = null;
    }
    const layout = await this.api.getLayout(this.view);
    this.view.revision = this.store.revision;
    this.scene = renderScene(this.mapEl, layout, this.store, this.view, {
      onRecall: (id) => this.recall(id),
      onSelect: (id) => this.select(id),
      onDropOnto: (dragged, target) => void this.edit({
        op: "reparent",
        node_id: dragged,
        new_parent_id: target,
      }),
      onEdgeSelect: (edgeId) => this.selectEdge(edgeId),
    });
    if (this.selectedEdge !== null) {
      this.scene.edgeElements.get(this.selectedEdge)?.classList.add("selected");
    }
  }

  // -- actions --

  recall(nodeId: number): void {
    if (nodeId === ROOT_ID) {
      this.status("the session root is not a page");
      return;
    }
    const node = this.store.node(nodeId);
    if (!node) return;
    if (node.opaque) {
      // tunneled hosts still have an https://host/ URL worth opening
      this.openUrl(node.url);
      this.status(`reopening ${node.url} (encrypted host)`);
      return;
    }
    this.openUrl(node.url);
    this.status(`reopening ${node.url}`);
  }

  select(nodeId: number | null): void {
    if (this.pendingLink !== null && nodeId !== null) {
      void this.completePendingLink(nodeId);
      return;
    }
    this.view.selection = nodeId;
    this.selectedEdge = null;
    for (const element of this.mapEl.querySelectorAll(".node.selected")) {
      element.classList.remove("selected");
    }
    for (const element of this.mapEl.querySelectorAll(".edge-extra.selected")) {
      element.classList.remove("selected");
    }
    if (nodeId !== null && this.scene) {
      this.scene.elementFor(nodeId)?.classList.add("selected");
      this.scene.focusNode(nodeId);
    }
  }

  selectEdge(edgeId: number): void {
    this.view.selection = null;
    this.selectedEdge = edgeId;
    for (const element of this.mapEl.querySelectorAll(".selected")) {
      element.classList.remove("selected");
    }
    this.scene?.edgeElements.get(edgeId)?.classList.add("selected");
    this.status(`edge ${edgeId} selected; Delete removes the link`);
  }

  async edit(cmd: EditCommand): Promise<boolean> {
    const result = await this.api.postEdit(cmd);
    if (!result.ok) {
      if (result.error.code === "cycle") {
        this.rejectVisually(
          "node_id" in cmd ? (cmd as { node_id: number }).node_id : null,
        );
        this.status(`rejected: ${result.error.message}`);
      } else {
        this.status(`edit failed: ${result.error.message}`);
      }
      return false;
    }
    // the confirmed delta arrives on the stream; nothing is applied here
    return true;
  }

  private rejectVisually(nodeId: number | null): void {
    if (nodeId === null || !this.scene) return;
    const element = this.scene.elementFor(nodeId);
    if (element) {
      element.classList.add("rejected");
      setTimeout(() => element.classList.remove("rejected"), 600);
    }
  }

  private async completePendingLink(target: number): Promise<void> {
    const pending = this.pendingLink!;
    this.pendingLink = null;
    if (pending.op === "add_link") {
      if (await this.edit({ op: "add_link", from: pending.from, to: target })) {
        this.status(`linked ${pending.from} → ${target}`);
      }
    } else {
      if (
        await this.edit({ op: "reparent", node_id: pending.from, new_parent_id: target })
      ) {
        this.status(`reparented ${pending.from} under ${target}`);
      }
    }
  }

  async deleteSelection(): Promise<void> {
    if (this.selectedEdge !== null) {
      const edgeId = this.selectedEdge;
      if (this.confirmFn(`Remove link ${edgeId}?`)) {
        await this.edit({ op: "remove_link", edge_id: edgeId });
      }
      return;
    }
    const nodeId = this.view.selection;
    if (nodeId === null || nodeId === ROOT_ID) {
      this.status("select a page or link to delete");
      return;
    }
    const node = this.store.node(nodeId);
    const name = node?.title || node?.url || String(nodeId);
    if (this.confirmFn(`Remove "${name}" and its links from the map?`)) {
      await this.edit({ op: "remove_node", node_id: nodeId });
    }
  }

  // -- keyboard model --

  private onKeyDown(ev: KeyboardEvent): void {
    if (!this.scene) return;
    const ids = this.scene.nodeIds;
    if (ids.length === 0) return;
    const key = ev.key;
    const position = this.view.selection !== null ? ids.indexOf(this.view.selection) : -1;

    if (key === "ArrowRight" || key === "ArrowDown") {
      this.select(ids[Math.min(position + 1, ids.length - 1)]);
      ev.preventDefault();
    } else if (key === "ArrowLeft" || key === "ArrowUp") {
      this.select(ids[Math.max(position - 1, 0)]);
      ev.preventDefault();
    } else if (key === "Enter") {
      if (this.pendingLink !== null && this.view.selection !== null) {
        void this.completePendingLink(this.view.selection);
      } else if (this.view.selection !== null) {
        this.recall(this.view.selection);
      }
      ev.preventDefault();
    } else if (key === "Delete" || key === "Backspace") {
      void this.deleteSelection();
      ev.preventDefault();
    } else if (key === "l" || key === "L") {
      if (this.view.selection !== null && this.view.selection !== ROOT_ID) {
        this.pendingLink = { op: "add_link", from: this.view.selection };
        this.status("link mode: choose the target node and press Enter");
      }
      ev.preventDefault();
    } else if (key === "r" || key === "R") {
      if (this.view.selection !== null && this.view.selection !== ROOT_ID) {
        this.pendingLink = { op: "reparent", from: this.view.selection };
        this.status("reparent mode: choose the new parent and press Enter");
      }
      ev.preventDefault();
    } else if (key === "e" || key === "E") {
      this.cycleEdgeSelection();
      ev.preventDefault();
    } else if (key === "Escape") {
      this.pendingLink = null;
      this.select(null);
      this.status("cleared");
      ev.preventDefault();
    }
  }

  private cycleEdgeSelection(): void {
    const nodeId = this.view.selection;
    if (nodeId === null) return;
    const incident = this.store.edgesTouching(nodeId);
    if (incident.length === 0) {
      this.status("no links on this node");
      return;
    }
    const at = this.selectedEdge !== null
      ? incident.findIndex((e) => e.id === this.selectedEdge)
      : -1;
    const next = incident[(at + 1) % incident.length];
    this.selectedEdge = next.id;
    this.status(`link ${next.from} → ${next.to} (${next.kind}); Delete removes it`);
  }

  // -- tooltip and status --

  private onHover(ev: Event): void {
    const group = (ev.target as Element).closest?.(".node") as SVGGElement | null;
    if (!group?.dataset.nodeId) {
      this.hideTooltip();
      return;
    }
    this.tooltipEl.textContent = tooltipFor(parseInt(group.dataset.nodeId, 10), this.store);
    this.tooltipEl.hidden = false;
  }

  private moveTooltip(ev: MouseEvent): void {
    if (!this.tooltipEl.hidden) {
      this.tooltipEl.style.left = `${ev.clientX + 14}px`;
      this.tooltipEl.style.top = `${ev.clientY + 14}px`;
    }
  }

  private hideTooltip(): void {
    this.tooltipEl.hidden = true;
  }

  status(message: string): void {
    this.statusEl.textContent = message;
  }

  dispose(): void {
    this.cancelStream?.();
  }
}

// -- tiny DOM helpers --

function el(tag: string, className: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  return node;
}

function select(label: string, values: string[], onChange: (v: string) => void): HTMLSelectElement {
  const node = document.createElement("select");
  node.setAttribute("aria-label", label);
  for (const value of values) {
    const option = document.createElement("option");
    option.value = value;
    option.textContent = value;
    node.appendChild(option);
  }
  node.addEventListener("change", () => onChange(node.value));
  return node;
}

function labeled(text: string, control: HTMLElement): HTMLElement {
  const wrap = el("label", "control");
  const span = document.createElement("span");
  span.textContent = text;
  wrap.append(span, control);
  return wrap;
}

function button(text: string, onClick: () => void): HTMLButtonElement {
  const node = document.createElement("button");
  node.type = "button";
  node.textContent = text;
  node.addEventListener("click", onClick);
  return node;
}

function anchor(text: string, href: string): HTMLAnchorElement {
  const node = document.createElement("a");
  node.textContent = text;
  node.href = href;
  node.target = "_blank";
  return node;
}
