"""The session navigation map: a directed graph of visited pages.

Nodes are distinct canonical URLs; edges record how pages were reached.
A virtual root (id 0) stands for the session start: pages visited without
a usable referer hang off it as "jump" edges, pages reached by following
a link get "followed" edges from the referer's node, and user edits add
"manual" edges. Dwell time accrues on the page the user is currently on
and is closed out - capped by the idle threshold - when the next
navigation arrives.

Every mutation bumps the map revision and returns a MapDelta describing
exactly what changed, so downstream consumers (persistence, the control
API stream, the UI) can replay state without re-deriving it.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field, replace
from typing import Iterable

ROOT_ID = 0

FOLLOWED = "followed"
JUMP = "jump"
MANUAL = "manual"

DEFAULT_IDLE_THRESHOLD_S = 300.0

SCHEMA_VERSION = 1


class NotFoundError(Exception):
    """An edit referenced a node or edge id that does not exist."""


class CycleError(Exception):
    """A reparent would make the spanning tree cyclic."""


@dataclass
class NavigationEvent:
    """One observed page visit, as emitted by the proxy pipeline."""

    ts: int  # ms since epoch
    url: str  # canonical URL text
    referer: str | None = None
    title: str | None = None
    opaque: bool = False
    txn_id: int = 0

    def to_json(self) -> dict:
        return {
            "ts": self.ts,
            "url": self.url,
            "referer": self.referer,
            "title": self.title,
            "opaque": self.opaque,
            "txn_id": self.txn_id,
        }

    @classmethod
    def from_json(cls, data: dict) -> "NavigationEvent":
        return cls(
            ts=data["ts"],
            url=data["url"],
            referer=data.get("referer"),
            title=data.get("title"),
            opaque=bool(data.get("opaque", False)),
            txn_id=data.get("txn_id", 0),
        )


@dataclass
class PageNode:
    node_id: int
    url: str
    title: str | None = None
    first_visit: int = 0
    last_visit: int = 0
    visit_count: int = 1
    dwell_seconds: float = 0.0
    thumbnail_ref: str | None = None
    opaque: bool = False

    def to_json(self) -> dict:
        return {
            "id": self.node_id,
            "url": self.url,
            "title": self.title,
            "first_visit": self.first_visit,
            "last_visit": self.last_visit,
            "visit_count": self.visit_count,
            "dwell_seconds": self.dwell_seconds,
            "thumbnail": self.thumbnail_ref,
            "opaque": self.opaque,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PageNode":
        return cls(
            node_id=data["id"],
            url=data["url"],
            title=data.get("title"),
            first_visit=data["first_visit"],
            last_visit=data["last_visit"],
            visit_count=data["visit_count"],
            dwell_seconds=data["dwell_seconds"],
            thumbnail_ref=data.get("thumbnail"),
            opaque=bool(data.get("opaque", False)),
        )


@dataclass
class NavEdge:
    edge_id: int
    src: int
    dst: int
    kind: str  # followed | jump | manual
    traversal_count: int = 1
    first_traversal: int = 0

    def to_json(self) -> dict:
        return {
            "id": self.edge_id,
            "from": self.src,
            "to": self.dst,
            "kind": self.kind,
            "traversals": self.traversal_count,
            "first_traversal": self.first_traversal,
        }

    @classmethod
    def from_json(cls, data: dict) -> "NavEdge":
        return cls(
            edge_id=data["id"],
            src=data["from"],
            dst=data["to"],
            kind=data["kind"],
            traversal_count=data["traversals"],
            first_traversal=data["first_traversal"],
        )


@dataclass
class MapDelta:
    """What one mutation changed; replaying deltas reconstructs the map."""

    revision: int
    nodes_upserted: list[PageNode] = field(default_factory=list)
    edges_upserted: list[NavEdge] = field(default_factory=list)
    nodes_removed: list[int] = field(default_factory=list)
    edges_removed: list[int] = field(default_factory=list)
    current: int | None = None
    preferred_set: dict[int, int] = field(default_factory=dict)
    preferred_cleared: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "type": "delta",
            "revision": self.revision,
            "nodes": [n.to_json() for n in self.nodes_upserted],
            "edges": [e.to_json() for e in self.edges_upserted],
            "removed_nodes": self.nodes_removed,
            "removed_edges": self.edges_removed,
            "current": self.current,
            "preferred_set": {str(k): v for k, v in self.preferred_set.items()},
            "preferred_cleared": self.preferred_cleared,
        }


# --- edit commands ---------------------------------------------------------


@dataclass(frozen=True)
class AddLink:
    from_id: int
    to_id: int


@dataclass(frozen=True)
class RemoveLink:
    edge_id: int


@dataclass(frozen=True)
class RemoveNode:
    node_id: int


@dataclass(frozen=True)
class Reparent:
    node_id: int
    new_parent_id: int


@dataclass(frozen=True)
class SetTitle:
    node_id: int
    title: str


@dataclass(frozen=True)
class AttachThumbnail:
    node_id: int
    path: str


EditCommand = AddLink | RemoveLink | RemoveNode | Reparent | SetTitle | AttachThumbnail

_EDIT_OPS = {
    "add_link": (AddLink, ("from", "to")),
    "remove_link": (RemoveLink, ("edge_id",)),
    "remove_node": (RemoveNode, ("node_id",)),
    "reparent": (Reparent, ("node_id", "new_parent_id")),
    "set_title": (SetTitle, ("node_id", "title")),
    "attach_thumbnail": (AttachThumbnail, ("node_id", "path")),
}


def edit_to_json(cmd: EditCommand) -> dict:
    if isinstance(cmd, AddLink):
        return {"op": "add_link", "from": cmd.from_id, "to": cmd.to_id}
    if isinstance(cmd, RemoveLink):
        return {"op": "remove_link", "edge_id": cmd.edge_id}
    if isinstance(cmd, RemoveNode):
        return {"op": "remove_node", "node_id": cmd.node_id}
    if isinstance(cmd, Reparent):
        return {"op": "reparent", "node_id": cmd.node_id, "new_parent_id": cmd.new_parent_id}
    if isinstance(cmd, SetTitle):
        return {"op": "set_title", "node_id": cmd.node_id, "title": cmd.title}
    if isinstance(cmd, AttachThumbnail):
        return {"op": "attach_thumbnail", "node_id": cmd.node_id, "path": cmd.path}
    raise TypeError(f"not an edit command: {cmd!r}")


def edit_from_json(data: dict) -> EditCommand:
    try:
        cls, keys = _EDIT_OPS[data["op"]]
        return cls(*(data[k] for k in keys))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed edit command: {data!r}") from exc


# --- the map ---------------------------------------------------------------


class SessionMap:
    """Mutable navigation map with one logical writer.

    Callers are expected to serialize mutations externally (the runtime
    holds one lock); the class itself only guarantees deterministic ids
    and revision numbering for a given call sequence.
    """

    def __init__(
        self,
        session_id: str | None = None,
        started_at: int = 0,
        idle_threshold_s: float = DEFAULT_IDLE_THRESHOLD_S,
    ) -> None:
        self.session_id = session_id or str(uuid.uuid4())
        self.started_at = started_at
        self.idle_threshold_s = idle_threshold_s
        self.root = ROOT_ID
        self.nodes: dict[int, PageNode] = {}
        self.edges: dict[int, NavEdge] = {}
        self.current: int | None = None
        self.preferred_parent: dict[int, int] = {}
        self.revision = 0
        self.schema_version = SCHEMA_VERSION
        self._next_node_id = 1
        self._next_edge_id = 1
        self._url_index: dict[str, int] = {}
        self._edge_index: dict[tuple[int, int, str], int] = {}

    # -- event folding --

    def apply_event(self, event: NavigationEvent) -> MapDelta:
        """Fold one navigation event into the map.

        Closes dwell on the page the user was on, creates or revisits the
        target node, and records the traversal: a followed edge from the
        referer's node when that page is on the map, else a jump edge from
        the session root. Self-navigations (reload, referer == url) count
        as jumps because followed self-loops are not allowed.
        """
        touched: dict[int, PageNode] = {}
        self._close_dwell(event.ts, touched)

        node_id = self._url_index.get(event.url)
        if node_id is None:
            node = PageNode(
                node_id=self._next_node_id,
                url=event.url,
                title=event.title,
                first_visit=event.ts,
                last_visit=event.ts,
                visit_count=1,
                opaque=event.opaque,
            )
            self._next_node_id += 1
            self.nodes[node.node_id] = node
            self._url_index[event.url] = node.node_id
        else:
            node = self.nodes[node_id]
            node.visit_count += 1
            node.last_visit = event.ts
            if event.title is not None:
                node.title = event.title
        touched[node.node_id] = node

        src, kind = ROOT_ID, JUMP
        if event.referer is not None:
            ref_id = self._url_index.get(event.referer)
            if ref_id is not None and ref_id != node.node_id:
                src, kind = ref_id, FOLLOWED
        edge = self._upsert_edge(src, node.node_id, kind, event.ts)

        self.current = node.node_id
        self.revision += 1
        return MapDelta(
            revision=self.revision,
            nodes_upserted=[touched[k] for k in sorted(touched)],
            edges_upserted=[edge],
            current=self.current,
        )

    def finalize_dwell(self, now_ms: int) -> MapDelta | None:
        """Close dwell on the current page and clear it; no-op when clear."""
        if self.current is None:
            return None
        touched: dict[int, PageNode] = {}
        self._close_dwell(now_ms, touched)
        self.current = None
        self.revision += 1
        return MapDelta(
            revision=self.revision,
            nodes_upserted=list(touched.values()),
            current=None,
        )

    def _close_dwell(self, now_ms: int, touched: dict[int, PageNode]) -> None:
        if self.current is None:
            return
        node = self.nodes[self.current]
        gap_s = max(now_ms - node.last_visit, 0) / 1000.0
        node.dwell_seconds += min(gap_s, self.idle_threshold_s)
        touched[node.node_id] = node

    def _upsert_edge(self, src: int, dst: int, kind: str, ts: int) -> NavEdge:
        key = (src, dst, kind)
        edge_id = self._edge_index.get(key)
        if edge_id is not None:
            edge = self.edges[edge_id]
            edge.traversal_count += 1
            return edge
        edge = NavEdge(
            edge_id=self._next_edge_id,
            src=src,
            dst=dst,
            kind=kind,
            traversal_count=1,
            first_traversal=ts,
        )
        self._next_edge_id += 1
        self.edges[edge.edge_id] = edge
        self._edge_index[key] = edge.edge_id
        return edge

    # -- edits --

    def apply_edit(self, cmd: EditCommand) -> MapDelta:
        """Apply a user edit; raises NotFoundError/CycleError without mutating."""
        if isinstance(cmd, AddLink):
            return self._edit_add_link(cmd)
        if isinstance(cmd, RemoveLink):
            return self._edit_remove_link(cmd)
        if isinstance(cmd, RemoveNode):
            return self._edit_remove_node(cmd)
        if isinstance(cmd, Reparent):
            return self._edit_reparent(cmd)
        if isinstance(cmd, SetTitle):
            node = self._require_node(cmd.node_id)
            node.title = cmd.title
            self.revision += 1
            return MapDelta(self.revision, nodes_upserted=[node], current=self.current)
        if isinstance(cmd, AttachThumbnail):
            node = self._require_node(cmd.node_id)
            node.thumbnail_ref = cmd.path
            self.revision += 1
            return MapDelta(self.revision, nodes_upserted=[node], current=self.current)
        raise TypeError(f"not an edit command: {cmd!r}")

    def _require_node(self, node_id: int) -> PageNode:
        node = self.nodes.get(node_id)
        if node is None:
            raise NotFoundError(f"no node {node_id}")
        return node

    def _require_endpoint(self, node_id: int) -> None:
        if node_id != ROOT_ID and node_id not in self.nodes:
            raise NotFoundError(f"no node {node_id}")

    def _edit_add_link(self, cmd: AddLink) -> MapDelta:
        self._require_endpoint(cmd.from_id)
        self._require_node(cmd.to_id)
        key = (cmd.from_id, cmd.to_id, MANUAL)
        edge_id = self._edge_index.get(key)
        if edge_id is not None:
            edge = self.edges[edge_id]
        else:
            edge = NavEdge(
                edge_id=self._next_edge_id,
                src=cmd.from_id,
                dst=cmd.to_id,
                kind=MANUAL,
                traversal_count=0,
                first_traversal=0,
            )
            self._next_edge_id += 1
            self.edges[edge.edge_id] = edge
            self._edge_index[key] = edge.edge_id
        self.revision += 1
        return MapDelta(self.revision, edges_upserted=[edge], current=self.current)

    def _edit_remove_link(self, cmd: RemoveLink) -> MapDelta:
        edge = self.edges.get(cmd.edge_id)
        if edge is None:
            raise NotFoundError(f"no edge {cmd.edge_id}")
        self._drop_edge(edge)
        cleared = []
        if edge.kind == MANUAL and self.preferred_parent.get(edge.dst) == edge.src:
            del self.preferred_parent[edge.dst]
            cleared.append(edge.dst)
        self.revision += 1
        return MapDelta(
            self.revision,
            edges_removed=[edge.edge_id],
            preferred_cleared=cleared,
            current=self.current,
        )

    def _edit_remove_node(self, cmd: RemoveNode) -> MapDelta:
        node = self._require_node(cmd.node_id)
        incident = [e for e in self.edges.values() if cmd.node_id in (e.src, e.dst)]
        for edge in incident:
            self._drop_edge(edge)
        del self.nodes[node.node_id]
        del self._url_index[node.url]
        cleared = []
        if node.node_id in self.preferred_parent:
            del self.preferred_parent[node.node_id]
            cleared.append(node.node_id)
        for child, parent in list(self.preferred_parent.items()):
            if parent == node.node_id:
                del self.preferred_parent[child]
                cleared.append(child)
        if self.current == node.node_id:
            self.current = None
        self.revision += 1
        return MapDelta(
            self.revision,
            nodes_removed=[node.node_id],
            edges_removed=sorted(e.edge_id for e in incident),
            preferred_cleared=sorted(cleared),
            current=self.current,
        )

    def _edit_reparent(self, cmd: Reparent) -> MapDelta:
        self._require_node(cmd.node_id)
        self._require_endpoint(cmd.new_parent_id)
        # walk the would-be ancestor chain; only cmd.node_id's parent changes,
        # so a cycle must pass through cmd.node_id itself
        probe = cmd.new_parent_id
        parents = self.spanning_tree()
        seen = set()
        while probe != ROOT_ID:
            if probe == cmd.node_id or probe in seen:
                raise CycleError(
                    f"reparenting {cmd.node_id} under {cmd.new_parent_id} would create a cycle"
                )
            seen.add(probe)
            probe = parents.get(probe, ROOT_ID)

        key = (cmd.new_parent_id, cmd.node_id, MANUAL)
        edge_id = self._edge_index.get(key)
        if edge_id is not None:
            edge = self.edges[edge_id]
        else:
            edge = NavEdge(
                edge_id=self._next_edge_id,
                src=cmd.new_parent_id,
                dst=cmd.node_id,
                kind=MANUAL,
                traversal_count=0,
                first_traversal=0,
            )
            self._next_edge_id += 1
            self.edges[edge.edge_id] = edge
            self._edge_index[key] = edge.edge_id
        self.preferred_parent[cmd.node_id] = cmd.new_parent_id
        self.revision += 1
        return MapDelta(
            self.revision,
            edges_upserted=[edge],
            preferred_set={cmd.node_id: cmd.new_parent_id},
            current=self.current,
        )

    def _drop_edge(self, edge: NavEdge) -> None:
        del self.edges[edge.edge_id]
        del self._edge_index[(edge.src, edge.dst, edge.kind)]

    # -- spanning tree --

    def spanning_tree(self) -> dict[int, int]:
        """Parent assignment for every page node, rooted at the session root.

        Priority per node: the preferred manual parent set by a reparent,
        else the source of its earliest-traversed incoming followed edge,
        else the root. Stale assignments that would orbit a cycle (a page
        can gain a followed in-edge from its own descendants) are demoted
        deterministically until the result is a tree.
        """
        first_followed: dict[int, NavEdge] = {}
        for edge in self.edges.values():
            if edge.kind != FOLLOWED or edge.dst not in self.nodes:
                continue
            if edge.src != ROOT_ID and edge.src not in self.nodes:
                continue
            best = first_followed.get(edge.dst)
            if best is None or (edge.first_traversal, edge.edge_id) < (
                best.first_traversal,
                best.edge_id,
            ):
                first_followed[edge.dst] = edge

        parents: dict[int, int] = {}
        pref_backed: set[int] = set()
        for node_id in self.nodes:
            pref = self.preferred_parent.get(node_id)
            if pref is not None and (pref == ROOT_ID or pref in self.nodes):
                parents[node_id] = pref
                pref_backed.add(node_id)
            elif node_id in first_followed:
                parents[node_id] = first_followed[node_id].src
            else:
                parents[node_id] = ROOT_ID

        while True:
            unreached = self._unreached(parents)
            if not unreached:
                return parents
            cycle = self._find_cycle(parents, unreached)
            victim = min(
                cycle,
                key=lambda n: (
                    n in pref_backed,
                    self.nodes[n].first_visit,
                    n,
                ),
            )
            if victim in pref_backed:
                pref_backed.discard(victim)
                edge = first_followed.get(victim)
                parents[victim] = edge.src if edge is not None else ROOT_ID
            else:
                parents[victim] = ROOT_ID

    def _unreached(self, parents: dict[int, int]) -> set[int]:
        children: dict[int, list[int]] = {}
        for node, parent in parents.items():
            children.setdefault(parent, []).append(node)
        reached: set[int] = set()
        stack = list(children.get(ROOT_ID, []))
        while stack:
            node = stack.pop()
            if node in reached:
                continue
            reached.add(node)
            stack.extend(children.get(node, []))
        return set(parents) - reached

    @staticmethod
    def _find_cycle(parents: dict[int, int], unreached: set[int]) -> list[int]:
        start = min(unreached)
        seen: dict[int, int] = {}
        node, i = start, 0
        while node not in seen:
            seen[node] = i
            node, i = parents[node], i + 1
        return [n for n, j in seen.items() if j >= seen[node]]

    # -- serialization --

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "session_id": self.session_id,
            "started_at": self.started_at,
            "idle_threshold_s": self.idle_threshold_s,
            "revision": self.revision,
            "current": self.current,
            "next_node_id": self._next_node_id,
            "next_edge_id": self._next_edge_id,
            "preferred_parent": {str(k): v for k, v in self.preferred_parent.items()},
            "nodes": [self.nodes[k].to_json() for k in sorted(self.nodes)],
            "edges": [self.edges[k].to_json() for k in sorted(self.edges)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SessionMap":
        m = cls(
            session_id=data["session_id"],
            started_at=data["started_at"],
            idle_threshold_s=data.get("idle_threshold_s", DEFAULT_IDLE_THRESHOLD_S),
        )
        m.schema_version = data["schema_version"]
        m.revision = data.get("revision", 0)
        m.current = data.get("current")
        m._next_node_id = data.get("next_node_id", 1)
        m._next_edge_id = data.get("next_edge_id", 1)
        m.preferred_parent = {int(k): v for k, v in data.get("preferred_parent", {}).items()}
        for nd in data.get("nodes", []):
            node = PageNode.from_json(nd)
            m.nodes[node.node_id] = node
            m._url_index[node.url] = node.node_id
            m._next_node_id = max(m._next_node_id, node.node_id + 1)
        for ed in data.get("edges", []):
            edge = NavEdge.from_json(ed)
            m.edges[edge.edge_id] = edge
            m._edge_index[(edge.src, edge.dst, edge.kind)] = edge.edge_id
            m._next_edge_id = max(m._next_edge_id, edge.edge_id + 1)
        return m

    def structurally_equal(self, other: "SessionMap") -> bool:
        """Equality over persisted content, ignoring only the revision."""
        return (
            self.session_id == other.session_id
            and self.started_at == other.started_at
            and self.idle_threshold_s == other.idle_threshold_s
            and self.current == other.current
            and self.preferred_parent == other.preferred_parent
            and {k: v.to_json() for k, v in self.nodes.items()}
            == {k: v.to_json() for k, v in other.nodes.items()}
            and {k: v.to_json() for k, v in self.edges.items()}
            == {k: v.to_json() for k, v in other.edges.items()}
        )


def apply_delta(target: SessionMap, delta: MapDelta) -> None:
    """Replay one delta onto a map; used by tests and stream consumers."""
    for node in delta.nodes_upserted:
        copy = replace(node)
        if copy.node_id in target.nodes:
            target._url_index.pop(target.nodes[copy.node_id].url, None)
        target.nodes[copy.node_id] = copy
        target._url_index[copy.url] = copy.node_id
        target._next_node_id = max(target._next_node_id, copy.node_id + 1)
    for edge in delta.edges_upserted:
        copy = replace(edge)
        target.edges[copy.edge_id] = copy
        target._edge_index[(copy.src, copy.dst, copy.kind)] = copy.edge_id
        target._next_edge_id = max(target._next_edge_id, copy.edge_id + 1)
    for edge_id in delta.edges_removed:
        edge = target.edges.pop(edge_id, None)
        if edge is not None:
            target._edge_index.pop((edge.src, edge.dst, edge.kind), None)
    for node_id in delta.nodes_removed:
        node = target.nodes.pop(node_id, None)
        if node is not None:
            target._url_index.pop(node.url, None)
    for node_id, parent in delta.preferred_set.items():
        target.preferred_parent[node_id] = parent
    for node_id in delta.preferred_cleared:
        target.preferred_parent.pop(node_id, None)
    target.current = delta.current
    target.revision = delta.revision


def seed_from_list(
    urls: Iterable[str],
    session_id: str | None = None,
    started_at: int = 0,
    idle_threshold_s: float = DEFAULT_IDLE_THRESHOLD_S,
) -> SessionMap:
    """Build a guided-tour skeleton from an ordered list of page URLs.

    One node per distinct URL (visit_count 1, dwell 0), chained with manual
    edges root -> u1 -> u2 -> ... in list order. Raises ValueError on an
    empty list; URL strings must already be canonical or parseable.
    """
    from .classify import normalize_url

    url_list = [normalize_url(u).text if "://" in u else normalize_url("http://" + u).text for u in urls]
    if not url_list:
        raise ValueError("seed list is empty")
    m = SessionMap(
        session_id=session_id,
        started_at=started_at,
        idle_threshold_s=idle_threshold_s,
    )
    prev = ROOT_ID
    for url in url_list:
        node_id = m._url_index.get(url)
        if node_id is None:
            node = PageNode(
                node_id=m._next_node_id,
                url=url,
                first_visit=started_at,
                last_visit=started_at,
                visit_count=1,
            )
            m._next_node_id += 1
            m.nodes[node.node_id] = node
            m._url_index[url] = node.node_id
            node_id = node.node_id
        if node_id != prev:
            key = (prev, node_id, MANUAL)
            if key not in m._edge_index:
                edge = NavEdge(
                    edge_id=m._next_edge_id,
                    src=prev,
                    dst=node_id,
                    kind=MANUAL,
                    traversal_count=0,
                    first_traversal=started_at,
                )
                m._next_edge_id += 1
                m.edges[edge.edge_id] = edge
                m._edge_index[key] = edge.edge_id
        prev = node_id
        m.revision += 1
    return m
