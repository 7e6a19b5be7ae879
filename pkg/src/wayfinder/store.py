"""Persistence: the append-only event log, map files, and exports.

The event log is the source of truth - one JSON object per line, written
in emission order. Rebuilding a map means replaying the log's navigation
events, edits and finalize markers in order. Saved maps are single
pretty-printed JSON documents whose first field is the schema version;
loaders refuse versions newer than they understand.
"""

from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path
from xml.sax.saxutils import escape as xml_escape

from .graph import (
    MANUAL,
    ROOT_ID,
    NavigationEvent,
    SessionMap,
    edit_from_json,
)
from .layout import ROOT_LABEL, PositionedLayout

SCHEMA_VERSION = 1

EVENTS_FILE = "events.jsonl"
MAP_FILE = "map.json"
JOURNAL_FILE = "journal.jsonl"

FLUSH_EVERY = 32
FLUSH_INTERVAL_S = 1.0


class ParseError(ValueError):
    """A stored file is corrupt; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


class VersionError(ValueError):
    """A stored file declares a schema version this build cannot read."""


def session_dir(data_dir: Path, session_id: str) -> Path:
    return Path(data_dir) / "sessions" / session_id


class LogWriter:
    """Append-only JSONL writer with a bounded flush policy.

    Appends are atomic at line granularity (one buffered line each) and
    durable within FLUSH_EVERY records or FLUSH_INTERVAL_S seconds,
    whichever comes first; a ticker thread covers the time bound when
    appends stop arriving.
    """

    def __init__(self, path: Path, flush_every: int = FLUSH_EVERY,
                 flush_interval: float = FLUSH_INTERVAL_S):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "ab")
        self._lock = threading.Lock()
        self._pending: list[bytes] = []
        self._last_flush = time.monotonic()
        self._flush_every = flush_every
        self._flush_interval = flush_interval
        self._closed = False
        self._ticker = threading.Thread(target=self._tick, daemon=True)
        self._ticker.start()

    def append(self, record: dict) -> None:
        line = json.dumps(record, separators=(",", ":")).encode("utf-8") + b"\n"
        with self._lock:
            if self._closed:
                raise ValueError("log writer is closed")
            self._pending.append(line)
            if (
                len(self._pending) >= self._flush_every
                or time.monotonic() - self._last_flush >= self._flush_interval
            ):
                self._flush_locked()

    def flush(self) -> None:
        with self._lock:
            self._flush_locked()

    def _flush_locked(self) -> None:
        if self._pending:
            self._fh.write(b"".join(self._pending))
            self._pending.clear()
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._last_flush = time.monotonic()

    def _tick(self) -> None:
        while not self._closed:
            time.sleep(self._flush_interval)
            with self._lock:
                if self._closed:
                    return
                if self._pending and time.monotonic() - self._last_flush >= self._flush_interval:
                    self._flush_locked()

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._flush_locked()
            self._closed = True
            self._fh.close()


def read_log(path: Path) -> list[dict]:
    """Read a JSONL event log, tolerating one truncated trailing line.

    A crash can leave at most a partial final line; that line is skipped.
    Corruption anywhere else raises ParseError with the byte offset.
    """
    records: list[dict] = []
    offset = 0
    pending_error: ParseError | None = None
    with open(path, "rb") as fh:
        for raw in fh:
            if pending_error is not None:
                raise pending_error
            line = raw.strip()
            if line:
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    pending_error = ParseError(
                        f"corrupt log line at byte {offset}: {exc}", offset
                    )
            offset += len(raw)
    return records


def append_record(path: Path, record: dict) -> None:
    """One-shot durable append, for callers without a live LogWriter."""
    line = json.dumps(record, separators=(",", ":")).encode("utf-8") + b"\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "ab") as fh:
        fh.write(line)
        fh.flush()
        os.fsync(fh.fileno())


# --- session map files -------------------------------------------------------


def save_map(session_map: SessionMap, path: Path) -> None:
    """Write the map as one JSON document; atomic via rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(session_map.to_json(), fh, indent=2)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_map(path: Path) -> SessionMap:
    raw = Path(path).read_bytes()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"corrupt map file at byte {exc.pos}: {exc}", exc.pos) from exc
    if not isinstance(data, dict) or "schema_version" not in data:
        raise ParseError("map file missing schema_version", 0)
    if data["schema_version"] > SCHEMA_VERSION:
        raise VersionError(
            f"map schema_version {data['schema_version']} is newer than supported {SCHEMA_VERSION}"
        )
    try:
        return SessionMap.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed map file: {exc}", 0) from exc


def replay_log(records: list[dict]) -> SessionMap:
    """Rebuild a SessionMap from event-log records.

    Consumes the session header plus nav_event / edit / finalize records;
    transaction records are analytics-only and skipped.
    """
    header = next((r for r in records if r.get("type") == "session"), None)
    if header is None:
        raise ParseError("log has no session header record", 0)
    m = SessionMap(
        session_id=header["session_id"],
        started_at=header["started_at"],
        idle_threshold_s=header.get("idle_threshold_s", 300.0),
    )
    for record in records:
        kind = record.get("type")
        if kind == "nav_event":
            m.apply_event(NavigationEvent.from_json(record))
        elif kind == "edit":
            m.apply_edit(edit_from_json(record["command"]))
        elif kind == "finalize":
            m.finalize_dwell(record["ts"])
    return m


# --- exports -----------------------------------------------------------------


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(session_map: SessionMap) -> str:
    """DOT digraph of the map: label = title or URL, edges carry their kind."""
    lines = ["digraph navigation {", "  rankdir=TB;", "  node [shape=box];"]
    lines.append(f"  n{ROOT_ID} [label={_dot_quote(ROOT_LABEL)}, shape=ellipse];")
    for node_id in sorted(session_map.nodes):
        node = session_map.nodes[node_id]
        label = node.title if node.title else node.url
        lines.append(f"  n{node_id} [label={_dot_quote(label)}];")
    for edge_id in sorted(session_map.edges):
        edge = session_map.edges[edge_id]
        attrs = [f"kind={_dot_quote(edge.kind)}"]
        if edge.kind == MANUAL:
            attrs.append("style=dashed")
        lines.append(f"  n{edge.src} -> n{edge.dst} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_svg(layout: PositionedLayout) -> str:
    """Standalone SVG 1.1 document of a positioned layout."""
    x, y, w, h = layout.bounds
    pad = 10.0
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'viewBox="{x - pad} {y - pad} {w + 2 * pad} {h + 2 * pad}" '
        f'width="{w + 2 * pad}" height="{h + 2 * pad}">',
    ]
    centers = {
        p.node_id: (p.x + layout.node_w / 2.0, p.y, p.y + layout.node_h)
        for p in layout.placements
    }
    for src, dst in layout.tree_edges:
        cx1, _, bottom = centers[src]
        cx2, top, _ = centers[dst]
        parts.append(
            f'<line x1="{cx1}" y1="{bottom}" x2="{cx2}" y2="{top}" '
            'stroke="#444" stroke-width="1.5"/>'
        )
    for src, dst, _kind in layout.extra_edges:
        cx1, top1, bottom1 = centers[src]
        cx2, top2, bottom2 = centers[dst]
        parts.append(
            f'<line x1="{cx1}" y1="{(top1 + bottom1) / 2}" x2="{cx2}" y2="{(top2 + bottom2) / 2}" '
            'stroke="#999" stroke-width="1" stroke-dasharray="5,4"/>'
        )
    for p in layout.placements:
        parts.append(
            f'<rect x="{p.x}" y="{p.y}" width="{layout.node_w}" height="{layout.node_h}" '
            'rx="6" fill="#eef3fa" stroke="#335"/>'
        )
        label = p.label if len(p.label) <= 40 else p.label[:37] + "..."
        parts.append(
            f'<text x="{p.x + layout.node_w / 2}" y="{p.y + layout.node_h / 2 + 4}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="12">'
            f"{xml_escape(label)}</text>"
        )
        hidden = layout.badges.get(p.node_id)
        if hidden:
            parts.append(
                f'<text x="{p.x + layout.node_w - 4}" y="{p.y + layout.node_h - 4}" '
                f'text-anchor="end" font-family="sans-serif" font-size="10" fill="#a33">'
                f"{hidden} hidden</text>"
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
