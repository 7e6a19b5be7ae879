// UI harness: scripted deltas drive the app exactly as the live stream
// would, with a fake control API standing in for the server.

import { beforeEach, describe, expect, it, vi } from "vitest";

import { App } from "../src/app.js";
import { drainLines, remainder } from "../src/client.js";
import { placeholderGlyph } from "../src/scene.js";
import { MapStore } from "../src/store.js";
import { FakeApi, emptySnapshot, makeDelta, makeNode } from "./fake_api.js";

function nodeGroups(root: HTMLElement): SVGGElement[] {
  return [...root.querySelectorAll<SVGGElement>(".node")];
}

function groupFor(root: HTMLElement, id: number): SVGGElement {
  const el = root.querySelector<SVGGElement>(`.node[data-node-id="${id}"]`);
  if (!el) throw new Error(`no node element ${id}`);
  return el;
}

function key(target: HTMLElement, k: string): void {
  target.dispatchEvent(new KeyboardEvent("keydown", { key: k, bubbles: true }));
}

async function setup(api = new FakeApi()) {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const opened: string[] = [];
  const app = new App(root, api, {
    openUrl: (url) => opened.push(url),
    confirm: () => true,
  });
  await app.init();
  const mapEl = root.querySelector<HTMLElement>(".map-container")!;
  return { root, app, api, opened, mapEl };
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("delta stream tracking", () => {
  it("scene node count tracks revisions exactly", async () => {
    const { root, app, api } = await setup();
    expect(app.store.revision).toBe(0);
    expect(nodeGroups(root).length).toBe(1); // session root only

    const steps = [
      makeDelta(1, { nodes: [makeNode(1, "http://a.test/")], current: 1 }),
      makeDelta(2, { nodes: [makeNode(2, "http://a.test/two")], current: 2 }),
      makeDelta(3, { nodes: [makeNode(3, "http://b.test/")], current: 3 }),
    ];
    let expected = 1;
    for (const delta of steps) {
      api.applyOnServer(delta);
      await app.handleStreamMessage(delta);
      expected += 1;
      expect(app.store.revision).toBe(delta.revision); // advanced by exactly 1
      expect(nodeGroups(root).length).toBe(expected);
    }

    const removal = makeDelta(4, { removed_nodes: [2], current: 3 });
    api.applyOnServer(removal);
    await app.handleStreamMessage(removal);
    expect(app.store.revision).toBe(4);
    expect(nodeGroups(root).length).toBe(3);
  });

  it("ignores stale deltas and heartbeats", async () => {
    const { app, api } = await setup();
    const delta = makeDelta(1, { nodes: [makeNode(1, "http://a.test/")], current: 1 });
    api.applyOnServer(delta);
    await app.handleStreamMessage(delta);
    await app.handleStreamMessage(delta); // replay: stale, no change
    expect(app.store.revision).toBe(1);
    await app.handleStreamMessage({ type: "heartbeat", revision: 1 });
    expect(app.store.revision).toBe(1);
  });

  it("refetches the full map on a revision gap", async () => {
    const { app, api } = await setup();
    const first = makeDelta(1, { nodes: [makeNode(1, "http://a.test/")], current: 1 });
    api.applyOnServer(first);
    await app.handleStreamMessage(first);

    // server advances twice but only the second delta arrives
    api.applyOnServer(makeDelta(2, { nodes: [makeNode(2, "http://b.test/")], current: 2 }));
    const third = makeDelta(3, { nodes: [makeNode(3, "http://c.test/")], current: 3 });
    api.applyOnServer(third);
    const mapCallsBefore = api.getMapCalls;
    await app.handleStreamMessage(third);

    expect(api.getMapCalls).toBe(mapCallsBefore + 1); // resynced, not guessed
    expect(app.store.revision).toBe(3);
    expect(app.store.nodes.size).toBe(3);
  });
});

describe("recall", () => {
  it("double-click issues a request for the exact node URL", async () => {
    const { root, app, api, opened } = await setup();
    const url = "http://a.test/deep/page?q=1&lang=en";
    const delta = makeDelta(1, { nodes: [makeNode(7, url)], current: 7 });
    api.applyOnServer(delta);
    await app.handleStreamMessage(delta);

    groupFor(root, 7).dispatchEvent(new MouseEvent("dblclick", { bubbles: true }));
    expect(opened).toEqual([url]);
  });

  it("double-click on the session root is a no-op with a message", async () => {
    const { root, app, opened } = await setup();
    groupFor(root, 0).dispatchEvent(new MouseEvent("dblclick", { bubbles: true }));
    expect(opened).toEqual([]);
    expect(root.querySelector(".status")!.textContent).toContain("not a page");
  });

  it("opaque hosts recall their https host URL", async () => {
    const { root, app, api, opened } = await setup();
    const delta = makeDelta(1, {
      nodes: [makeNode(4, "https://secure.test/", { opaque: true })],
      current: 4,
    });
    api.applyOnServer(delta);
    await app.handleStreamMessage(delta);
    groupFor(root, 4).dispatchEvent(new MouseEvent("dblclick", { bubbles: true }));
    expect(opened).toEqual(["https://secure.test/"]);
  });
});

describe("editing", () => {
  async function twoNodeApp() {
    const api = new FakeApi();
    api.snapshot = {
      ...emptySnapshot(),
      revision: 2,
      nodes: [makeNode(1, "http://a.test/"), makeNode(2, "http://b.test/")],
      current: 2,
    };
    return setup(api);
  }

  it("drag onto another node posts a reparent", async () => {
    const { root, api } = await twoNodeApp();
    groupFor(root, 1).dispatchEvent(new MouseEvent("mousedown", { bubbles: true }));
    groupFor(root, 2).dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));
    expect(api.edits).toEqual([{ op: "reparent", node_id: 1, new_parent_id: 2 }]);
  });

  it("cycle-rejected reparent leaves the revision unchanged", async () => {
    const { root, app, api } = await twoNodeApp();
    api.editResponder = () => ({
      ok: false,
      status: 422,
      error: { code: "cycle", message: "would create a cycle", detail: null },
    });
    const before = app.store.revision;
    groupFor(root, 1).dispatchEvent(new MouseEvent("mousedown", { bubbles: true }));
    groupFor(root, 2).dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));
    await vi.waitFor(() => {
      expect(root.querySelector(".status")!.textContent).toContain("rejected");
    });
    expect(app.store.revision).toBe(before); // nothing rendered optimistically
    expect(api.edits.length).toBe(1);
  });

  it("confirmed edits wait for the stream delta", async () => {
    const { root, app, api } = await twoNodeApp();
    groupFor(root, 1).dispatchEvent(new MouseEvent("mousedown", { bubbles: true }));
    groupFor(root, 2).dispatchEvent(new MouseEvent("mouseup", { bubbles: true }));
    await vi.waitFor(() => expect(api.edits.length).toBe(1));
    expect(app.store.revision).toBe(2); // POST response alone changes nothing
    const confirmed = makeDelta(3, { preferred_set: { "1": 2 }, current: 2 });
    api.applyOnServer(confirmed);
    await app.handleStreamMessage(confirmed);
    expect(app.store.revision).toBe(3);
  });
});

describe("keyboard-only operation", () => {
  it("walks to a node, recalls it, then deletes another", async () => {
    const api = new FakeApi();
    api.snapshot = {
      ...emptySnapshot(),
      revision: 2,
      nodes: [
        makeNode(1, "http://a.test/", { title: "Alpha" }),
        makeNode(2, "http://b.test/", { title: "Beta" }),
      ],
      current: 2,
    };
    const { app, api: _, opened, mapEl } = await setup(api);

    key(mapEl, "ArrowRight"); // focus session root
    key(mapEl, "ArrowRight"); // first page
    expect(app.view.selection).toBe(1);
    key(mapEl, "Enter"); // recall reached via keyboard alone
    expect(opened).toEqual(["http://a.test/"]);

    key(mapEl, "ArrowRight"); // second page
    expect(app.view.selection).toBe(2);
    key(mapEl, "Delete"); // delete reached via keyboard alone
    await vi.waitFor(() =>
      expect(api.edits).toContainEqual({ op: "remove_node", node_id: 2 }),
    );
  });

  it("link mode connects two nodes from the keyboard", async () => {
    const api = new FakeApi();
    api.snapshot = {
      ...emptySnapshot(),
      revision: 2,
      nodes: [makeNode(1, "http://a.test/"), makeNode(2, "http://b.test/")],
      current: null,
    };
    const { app, mapEl } = await setup(api);
    key(mapEl, "ArrowRight");
    key(mapEl, "ArrowRight"); // node 1
    key(mapEl, "l"); // arm link mode
    key(mapEl, "ArrowRight"); // node 2
    key(mapEl, "Enter"); // complete the link
    await vi.waitFor(() =>
      expect(api.edits).toContainEqual({ op: "add_link", from: 1, to: 2 }),
    );
  });

  it("cycles incident edges and deletes one", async () => {
    const api = new FakeApi();
    api.snapshot = {
      ...emptySnapshot(),
      revision: 2,
      nodes: [makeNode(1, "http://a.test/"), makeNode(2, "http://b.test/")],
      edges: [
        {
          id: 9,
          from: 1,
          to: 2,
          kind: "manual",
          traversals: 0,
          first_traversal: 0,
        },
      ],
      current: null,
    };
    const { app, mapEl } = await setup(api);
    key(mapEl, "ArrowRight");
    key(mapEl, "ArrowRight"); // node 1
    key(mapEl, "e"); // select its link
    key(mapEl, "Delete");
    await vi.waitFor(() =>
      expect(api.edits).toContainEqual({ op: "remove_link", edge_id: 9 }),
    );
  });

  it("every interactive node is labeled for assistive tech", async () => {
    const api = new FakeApi();
    api.snapshot = {
      ...emptySnapshot(),
      revision: 1,
      nodes: [makeNode(1, "http://a.test/", { title: "Alpha", dwell_seconds: 65 })],
      current: 1,
    };
    const { root } = await setup(api);
    for (const group of nodeGroups(root)) {
      expect(group.getAttribute("role")).toBe("button");
      expect(group.getAttribute("aria-label")).toBeTruthy();
    }
    expect(groupFor(root, 1).getAttribute("aria-label")).toContain("Alpha");
  });
});

describe("view state", () => {
  it("mode switch relabels without moving boxes", async () => {
    const api = new FakeApi();
    api.snapshot = {
      ...emptySnapshot(),
      revision: 1,
      nodes: [makeNode(1, "http://a.test/", { title: "Alpha" })],
      current: 1,
    };
    const { root, app } = await setup(api);
    const textBefore = groupFor(root, 1).querySelector("text")!.textContent;
    const rectBefore = groupFor(root, 1).querySelector("rect")!.getAttribute("x");

    const modeSelect = root.querySelector<HTMLSelectElement>(
      'select[aria-label="labels"]',
    )!;
    modeSelect.value = "url";
    modeSelect.dispatchEvent(new Event("change"));
    await vi.waitFor(() => {
      expect(groupFor(root, 1).querySelector("text")!.textContent).not.toBe(textBefore);
    });
    expect(groupFor(root, 1).querySelector("rect")!.getAttribute("x")).toBe(rectBefore);
    expect(groupFor(root, 1).querySelector("text")!.textContent).toContain("a.test");
  });

  it("current node and selection are visually marked", async () => {
    const api = new FakeApi();
    api.snapshot = {
      ...emptySnapshot(),
      revision: 1,
      nodes: [makeNode(1, "http://a.test/")],
      current: 1,
    };
    const { root, app } = await setup(api);
    expect(groupFor(root, 1).classList.contains("current")).toBe(true);
    groupFor(root, 1).dispatchEvent(new MouseEvent("click", { bubbles: true }));
    expect(groupFor(root, 1).classList.contains("selected")).toBe(true);
  });

  it("hover content: titled, root, and opaque nodes", async () => {
    const api = new FakeApi();
    api.snapshot = {
      ...emptySnapshot(),
      revision: 2,
      nodes: [
        makeNode(1, "http://a.test/x", { title: "Alpha", visit_count: 3 }),
        makeNode(2, "https://hidden.test/", { opaque: true }),
      ],
      current: null,
    };
    const { root } = await setup(api);
    const tooltip = root.querySelector<HTMLElement>(".tooltip")!;

    groupFor(root, 1).dispatchEvent(new MouseEvent("mouseover", { bubbles: true }));
    expect(tooltip.hidden).toBe(false);
    expect(tooltip.textContent).toContain("Alpha");
    expect(tooltip.textContent).toContain("http://a.test/x");
    expect(tooltip.textContent).toContain("3");

    groupFor(root, 2).dispatchEvent(new MouseEvent("mouseover", { bubbles: true }));
    expect(tooltip.textContent).toContain("hidden.test");
    expect(tooltip.textContent).toContain("encrypted");
    expect(tooltip.textContent).not.toContain("https://hidden.test/ ");

    groupFor(root, 0).dispatchEvent(new MouseEvent("mouseover", { bubbles: true }));
    expect(tooltip.textContent).toContain("session");
  });
});

describe("pure pieces", () => {
  it("store applyDelta enforces contiguity", () => {
    const store = new MapStore();
    store.loadSnapshot(emptySnapshot());
    expect(store.applyDelta(makeDelta(1))).toBe("applied");
    expect(store.applyDelta(makeDelta(1))).toBe("stale");
    expect(store.applyDelta(makeDelta(3))).toBe("gap");
    expect(store.revision).toBe(1);
  });

  it("stream line parser splits complete lines and keeps the tail", () => {
    const buffer = '{"a":1}\n{"b":2}\n{"partial';
    expect(drainLines(buffer)).toEqual(['{"a":1}', '{"b":2}']);
    expect(remainder(buffer)).toBe('{"partial');
    expect(drainLines("\n")).toEqual([]);
  });

  it("thumbnail placeholder glyph is deterministic per host", () => {
    expect(placeholderGlyph("a.test")).toBe(placeholderGlyph("a.test"));
    expect(placeholderGlyph("a.test")).not.toBe("");
  });
});
