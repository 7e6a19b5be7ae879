"""Planar coordinates for the navigation map's spanning tree.

Uses the linear-time tidy layered tree algorithm (Buchheim, Junger and
Leipert's refinement of Walker's method): siblings are packed left to
right in first-visit order with at least ``h_gap`` between node boxes,
parents are centered over their children, and depth sets the row. Tree
edges come out crossing-free by construction; non-tree edges (cross
links, manual links, repeat jumps) are reported separately and drawn
dashed by consumers.

Two coarser views of the same map are supported: host-level aggregation
and depth pruning with "hidden" badges.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from urllib.parse import urlsplit

from .graph import (
    FOLLOWED,
    JUMP,
    MANUAL,
    ROOT_ID,
    NavEdge,
    PageNode,
    SessionMap,
)

ROOT_LABEL = "session"


@dataclass(frozen=True)
class LayoutOptions:
    level: str = "page"  # page | host
    max_depth: int | None = None
    display_mode: str = "title"  # title | url | thumbnail
    node_w: float = 150.0
    node_h: float = 44.0
    h_gap: float = 28.0
    v_gap: float = 52.0

    def validate(self) -> None:
        if self.level not in ("page", "host"):
            raise ValueError(f"unknown level {self.level!r}")
        if self.display_mode not in ("title", "url", "thumbnail"):
            raise ValueError(f"unknown display mode {self.display_mode!r}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if min(self.node_w, self.node_h, self.h_gap, self.v_gap) <= 0:
            raise ValueError("box and gap dimensions must be positive")


@dataclass
class Placement:
    node_id: int
    x: float
    y: float
    label: str

    def to_json(self) -> dict:
        return {"id": self.node_id, "x": self.x, "y": self.y, "label": self.label}


@dataclass
class PositionedLayout:
    revision: int
    placements: list[Placement]
    tree_edges: list[tuple[int, int]]
    extra_edges: list[tuple[int, int, str]]
    bounds: tuple[float, float, float, float]  # x, y, width, height
    badges: dict[int, int] = field(default_factory=dict)
    node_w: float = 150.0
    node_h: float = 44.0

    def to_json(self) -> dict:
        return {
            "revision": self.revision,
            "placements": [p.to_json() for p in self.placements],
            "tree_edges": [list(e) for e in self.tree_edges],
            "extra_edges": [list(e) for e in self.extra_edges],
            "bounds": list(self.bounds),
            "badges": {str(k): v for k, v in self.badges.items()},
            "node_w": self.node_w,
            "node_h": self.node_h,
        }


class TreeNode:
    """One node of the display tree; children kept in sibling order."""

    __slots__ = (
        "node_id", "page", "children", "parent", "number", "hidden",
        "x", "depth", "_prelim", "_mod", "_shift", "_change", "_thread", "_ancestor",
    )

    def __init__(self, node_id: int, page: PageNode | None, parent: "TreeNode | None"):
        self.node_id = node_id
        self.page = page
        self.children: list[TreeNode] = []
        self.parent = parent
        self.number = 0
        self.hidden = 0  # descendants removed by depth pruning
        self.x = 0.0
        self.depth = 0
        self._prelim = 0.0
        self._mod = 0.0
        self._shift = 0.0
        self._change = 0.0
        self._thread: TreeNode | None = None
        self._ancestor: TreeNode = self

    def walk(self):
        # iterative pre-order; browsing chains can outgrow the recursion limit
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


def build_tree(session_map: SessionMap) -> TreeNode:
    """Display tree from the map's spanning-tree parent assignment.

    Siblings are ordered by first visit (ties by node id) so reading
    left to right follows time.
    """
    parents = session_map.spanning_tree()
    children: dict[int, list[int]] = {}
    for node_id, parent in parents.items():
        children.setdefault(parent, []).append(node_id)
    for sibs in children.values():
        sibs.sort(key=lambda n: (session_map.nodes[n].first_visit, n))

    root = TreeNode(ROOT_ID, None, None)
    stack = [(root, children.get(ROOT_ID, []))]
    while stack:
        parent_node, child_ids = stack.pop()
        for i, child_id in enumerate(child_ids):
            child = TreeNode(child_id, session_map.nodes[child_id], parent_node)
            child.number = i
            child.depth = parent_node.depth + 1
            parent_node.children.append(child)
            stack.append((child, children.get(child_id, [])))
    return root


def prune_depth(tree: TreeNode, d: int) -> TreeNode:
    """Drop nodes deeper than d; ancestors at depth d carry a hidden count."""
    if d < 1:
        raise ValueError("depth bound must be >= 1")
    order = list(tree.walk())
    size: dict[int, int] = {}
    for node in reversed(order):  # descendants precede their parent here
        size[id(node)] = 1 + sum(size[id(c)] for c in node.children)
    for node in order:
        if node.depth == d and node.children:
            node.hidden = size[id(node)] - 1
            node.children = []
    return tree


# --- tidy tree placement (Buchheim / Junger / Leipert) ----------------------


_ENTER, _AFTER_CHILD = 0, 1


def _first_walk(root: TreeNode, distance: float) -> None:
    # iterative post-order: a child subtree is finished, then apportioned
    stack: list[tuple[int, TreeNode, int, TreeNode | None]] = [(_ENTER, root, 0, None)]
    while stack:
        state, v, i, default_ancestor = stack.pop()
        if state == _ENTER:
            if not v.children:
                w = _left_sibling(v)
                v._prelim = w._prelim + distance if w is not None else 0.0
                continue
            stack.append((_AFTER_CHILD, v, 0, v.children[0]))
            stack.append((_ENTER, v.children[0], 0, None))
            continue
        default_ancestor = _apportion(v.children[i], default_ancestor, distance)
        i += 1
        if i < len(v.children):
            stack.append((_AFTER_CHILD, v, i, default_ancestor))
            stack.append((_ENTER, v.children[i], 0, None))
            continue
        _execute_shifts(v)
        midpoint = (v.children[0]._prelim + v.children[-1]._prelim) / 2.0
        w = _left_sibling(v)
        if w is not None:
            v._prelim = w._prelim + distance
            v._mod = v._prelim - midpoint
        else:
            v._prelim = midpoint


def _left_sibling(v: TreeNode) -> TreeNode | None:
    if v.parent is not None and v.number > 0:
        return v.parent.children[v.number - 1]
    return None


def _apportion(v: TreeNode, default_ancestor: TreeNode, distance: float) -> TreeNode:
    w = _left_sibling(v)
    if w is None:
        return default_ancestor
    vir = vor = v
    vil = w
    vol = v.parent.children[0]
    sir = vir._mod
    sor = vor._mod
    sil = vil._mod
    sol = vol._mod
    while _next_right(vil) is not None and _next_left(vir) is not None:
        vil = _next_right(vil)
        vir = _next_left(vir)
        vol = _next_left(vol)
        vor = _next_right(vor)
        vor._ancestor = v
        shift = (vil._prelim + sil) - (vir._prelim + sir) + distance
        if shift > 0:
            _move_subtree(_ancestor(vil, v, default_ancestor), v, shift)
            sir += shift
            sor += shift
        sil += vil._mod
        sir += vir._mod
        sol += vol._mod
        sor += vor._mod
    if _next_right(vil) is not None and _next_right(vor) is None:
        vor._thread = _next_right(vil)
        vor._mod += sil - sor
    if _next_left(vir) is not None and _next_left(vol) is None:
        vol._thread = _next_left(vir)
        vol._mod += sir - sol
        default_ancestor = v
    return default_ancestor


def _next_left(v: TreeNode) -> TreeNode | None:
    return v.children[0] if v.children else v._thread


def _next_right(v: TreeNode) -> TreeNode | None:
    return v.children[-1] if v.children else v._thread


def _move_subtree(wl: TreeNode, wr: TreeNode, shift: float) -> None:
    subtrees = wr.number - wl.number
    wr._change -= shift / subtrees
    wr._shift += shift
    wl._change += shift / subtrees
    wr._prelim += shift
    wr._mod += shift


def _execute_shifts(v: TreeNode) -> None:
    shift = 0.0
    change = 0.0
    for w in reversed(v.children):
        w._prelim += shift
        w._mod += shift
        change += w._change
        shift += w._shift + change


def _ancestor(vil: TreeNode, v: TreeNode, default_ancestor: TreeNode) -> TreeNode:
    if vil._ancestor.parent is v.parent:
        return vil._ancestor
    return default_ancestor


def _second_walk(v: TreeNode, m: float) -> None:
    stack = [(v, m)]
    while stack:
        node, acc = stack.pop()
        node.x = node._prelim + acc
        for child in node.children:
            stack.append((child, acc + node._mod))


def _label_for(node: TreeNode, mode: str) -> str:
    page = node.page
    if page is None:
        return ROOT_LABEL
    if mode == "url":
        return page.url
    if mode == "thumbnail":
        if page.thumbnail_ref:
            return page.thumbnail_ref
        return _host_of(page.url) or page.url
    return page.title if page.title else page.url


def _host_of(url: str) -> str | None:
    try:
        return urlsplit(url).hostname
    except ValueError:
        return None


def layout_tree(tree: TreeNode, options: LayoutOptions, revision: int = 0) -> PositionedLayout:
    """Place a display tree; deterministic for identical input."""
    options.validate()
    distance = options.node_w + options.h_gap
    _first_walk(tree, distance)
    _second_walk(tree, -tree._prelim)

    nodes = list(tree.walk())
    min_x = min(n.x for n in nodes)
    placements = []
    badges = {}
    row = options.node_h + options.v_gap
    for n in nodes:
        x = n.x - min_x
        y = n.depth * row
        placements.append(Placement(n.node_id, x, y, _label_for(n, options.display_mode)))
        if n.hidden:
            badges[n.node_id] = n.hidden
    placements.sort(key=lambda p: p.node_id)

    tree_edges = []
    for n in nodes:
        for child in n.children:
            tree_edges.append((n.node_id, child.node_id))
    tree_edges.sort()

    width = max(p.x for p in placements) + options.node_w
    height = max(p.y for p in placements) + options.node_h
    return PositionedLayout(
        revision=revision,
        placements=placements,
        tree_edges=tree_edges,
        extra_edges=[],
        bounds=(0.0, 0.0, width, height),
        badges=badges,
        node_w=options.node_w,
        node_h=options.node_h,
    )


def layout_map(session_map: SessionMap, options: LayoutOptions) -> PositionedLayout:
    """Full pipeline: level aggregation, pruning, placement, extra edges."""
    options.validate()
    source = aggregate_hosts(session_map) if options.level == "host" else session_map
    tree = build_tree(source)
    if options.max_depth is not None:
        tree = prune_depth(tree, options.max_depth)
    result = layout_tree(tree, options, revision=session_map.revision)

    shown = {p.node_id for p in result.placements}
    tree_pairs = set(result.tree_edges)
    extra = []
    for edge_id in sorted(source.edges):
        edge = source.edges[edge_id]
        if edge.src not in shown or edge.dst not in shown:
            continue
        if (edge.src, edge.dst) in tree_pairs:
            continue
        extra.append((edge.src, edge.dst, edge.kind))
    result.extra_edges = extra
    return result


# --- host-level aggregation --------------------------------------------------

_KIND_RANK = {FOLLOWED: 0, JUMP: 1, MANUAL: 2}


def aggregate_hosts(session_map: SessionMap) -> SessionMap:
    """Collapse the page map to one node per host.

    Dwell and visit counts are summed over a host's pages; an edge links
    two hosts when any page edge crossed between them (traversals summed,
    intra-host edges dropped). The result is a derived view carrying the
    source map's revision.
    """
    groups: dict[str, list[PageNode]] = {}
    for node in session_map.nodes.values():
        host = _host_of(node.url) or node.url
        groups.setdefault(host, []).append(node)

    result = SessionMap(
        session_id=session_map.session_id,
        started_at=session_map.started_at,
        idle_threshold_s=session_map.idle_threshold_s,
    )
    result.revision = session_map.revision

    host_order = sorted(
        groups.items(), key=lambda kv: (min(n.first_visit for n in kv[1]), kv[0])
    )
    host_ids: dict[str, int] = {}
    page_host: dict[int, int] = {}
    for host, pages in host_order:
        scheme_page = min(pages, key=lambda n: (n.first_visit, n.node_id))
        url = f"{urlsplit(scheme_page.url).scheme or 'http'}://{host}/"
        node = PageNode(
            node_id=result._next_node_id,
            url=url,
            title=host,
            first_visit=min(n.first_visit for n in pages),
            last_visit=max(n.last_visit for n in pages),
            visit_count=sum(n.visit_count for n in pages),
            dwell_seconds=sum(n.dwell_seconds for n in pages),
            opaque=all(n.opaque for n in pages),
        )
        result._next_node_id += 1
        result.nodes[node.node_id] = node
        result._url_index[node.url] = node.node_id
        host_ids[host] = node.node_id
        for page in pages:
            page_host[page.node_id] = node.node_id

    merged: dict[tuple[int, int], dict] = {}
    for edge in session_map.edges.values():
        # root jumps and intra-host edges vanish at this level; hosts with no
        # cross-host in-edge hang off the root via the spanning-tree fallback
        src = page_host.get(edge.src)
        dst = page_host.get(edge.dst)
        if dst is None or src is None or src == dst:
            continue
        slot = merged.setdefault(
            (src, dst),
            {"traversals": 0, "first": edge.first_traversal, "rank": _KIND_RANK[edge.kind]},
        )
        slot["traversals"] += edge.traversal_count
        slot["first"] = min(slot["first"], edge.first_traversal)
        slot["rank"] = min(slot["rank"], _KIND_RANK[edge.kind])

    rank_kind = {v: k for k, v in _KIND_RANK.items()}
    for (src, dst), slot in sorted(
        merged.items(), key=lambda kv: (kv[1]["first"], kv[0])
    ):
        edge = NavEdge(
            edge_id=result._next_edge_id,
            src=src,
            dst=dst,
            kind=rank_kind[slot["rank"]],
            traversal_count=slot["traversals"],
            first_traversal=slot["first"],
        )
        result._next_edge_id += 1
        result.edges[edge.edge_id] = edge
        result._edge_index[(src, dst, edge.kind)] = edge.edge_id

    if session_map.current is not None:
        result.current = page_host.get(session_map.current)
    return result
