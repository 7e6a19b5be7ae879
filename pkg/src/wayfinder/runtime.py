"""Session runtime: the single ordered pipeline from proxy to map.

Transaction ids, log appends, navigation classification, map mutations
and delta fan-out all pass through one lock, so downstream consumers
(the event log, the update stream, API snapshots) observe one consistent
order. Everything else in the process - proxy connection threads, API
handler threads - calls into this object.
"""

from __future__ import annotations

import queue
import threading
import time
from pathlib import Path

from . import store
from .cache import ResponseCache
from .classify import UrlError, extract_title, is_page_navigation, media_type, normalize_url
from .config import ProxyConfig
from .graph import (
    EditCommand,
    MapDelta,
    NavigationEvent,
    SessionMap,
    edit_to_json,
)
from .layout import LayoutOptions, PositionedLayout, layout_map
from .proxy import HttpTransaction, RequestHead, decode_for_inspection
from .reports import DailyReport, daily_report, session_summary

SUBSCRIBER_BUFFER = 256


class Subscriber:
    """One update-stream consumer; dropped when its buffer overflows."""

    def __init__(self) -> None:
        self.queue: queue.Queue[dict] = queue.Queue(maxsize=SUBSCRIBER_BUFFER)
        self.dropped = False


class SessionRuntime:
    def __init__(
        self,
        config: ProxyConfig,
        session_map: SessionMap | None = None,
        clock=None,
    ) -> None:
        config.validate()
        self.config = config
        self._clock = clock or time.time
        self.cache = ResponseCache(
            max_residence=config.cache_max_residence_s,
            max_idle=config.cache_max_idle_s,
            capacity_bytes=config.cache_capacity_bytes,
        )
        self.lock = threading.RLock()
        self.map = session_map or SessionMap(
            started_at=self.now_ms(), idle_threshold_s=config.idle_threshold_s
        )
        self.baseline_revision = self.map.revision
        self.deltas: list[MapDelta] = []
        self._subscribers: list[Subscriber] = []
        self._txn_seq = 0
        self._last_event_ts = self.map.started_at
        self.store_error: str | None = None
        self._nav_events: list[NavigationEvent] = []
        self._events_log: store.LogWriter | None = None
        self._journal_log: store.LogWriter | None = None
        if config.data_dir is not None:
            self._open_session_files()

    # -- clocks and files --

    def now_ms(self) -> int:
        return int(self._clock() * 1000)

    @property
    def session_path(self) -> Path | None:
        if self.config.data_dir is None:
            return None
        return store.session_dir(self.config.data_dir, self.map.session_id)

    def _open_session_files(self) -> None:
        base = self.session_path
        assert base is not None
        events_path = base / store.EVENTS_FILE
        fresh = not events_path.exists() or events_path.stat().st_size == 0
        self._events_log = store.LogWriter(events_path)
        self._journal_log = store.LogWriter(base / store.JOURNAL_FILE)
        if fresh:
            self._append_event_record(
                {
                    "type": "session",
                    "schema_version": store.SCHEMA_VERSION,
                    "session_id": self.map.session_id,
                    "started_at": self.map.started_at,
                    "idle_threshold_s": self.map.idle_threshold_s,
                }
            )
        else:
            for record in store.read_log(events_path):
                if record.get("type") == "nav_event":
                    self._nav_events.append(NavigationEvent.from_json(record))

    def _append_event_record(self, record: dict) -> None:
        if self._events_log is None:
            return
        try:
            self._events_log.append(dict(record, session_id=self.map.session_id))
            self.store_error = None
        except OSError as exc:
            self.store_error = f"event log append failed: {exc}"

    def _append_journal(self, record: dict) -> None:
        if self._journal_log is None:
            return
        try:
            self._journal_log.append(dict(record, session_id=self.map.session_id))
        except OSError as exc:
            self.store_error = f"journal append failed: {exc}"

    # -- transaction recording (called by proxy threads) --

    def record_plain(
        self,
        *,
        started_at_ms: int,
        head: RequestHead,
        status: int,
        response_headers: list[tuple[str, str]],
        body: bytes,
        served_from_cache: bool,
        canonical: str | None,
    ) -> HttpTransaction:
        with self.lock:
            self._txn_seq += 1
            txn = HttpTransaction(
                id=self._txn_seq,
                started_at=started_at_ms,
                method=head.method,
                url=head.target,
                referer=head.header("Referer"),
                status=status,
                content_type=_header_value(response_headers, "Content-Type"),
                body_bytes=len(body),
                served_from_cache=served_from_cache,
                kind="plain",
                accept=head.header("Accept"),
            )
            self._append_event_record(dict(txn.to_json(), type="txn"))
            if canonical is not None and is_page_navigation(txn):
                title = None
                if body and media_type(txn.content_type) in ("text/html", "application/xhtml+xml"):
                    title = extract_title(
                        decode_for_inspection(body, response_headers), txn.content_type
                    )
                referer_canonical = None
                if txn.referer:
                    try:
                        referer_canonical = normalize_url(txn.referer).text
                    except UrlError:
                        referer_canonical = None
                self._emit_event(
                    NavigationEvent(
                        ts=self._event_ts(),
                        url=canonical,
                        referer=referer_canonical,
                        title=title,
                        opaque=False,
                        txn_id=txn.id,
                    )
                )
            return txn

    def record_tunnel(
        self, *, started_at_ms: int, host: str, port: int, ok: bool
    ) -> HttpTransaction:
        url = f"https://{host}/" if port == 443 else f"https://{host}:{port}/"
        with self.lock:
            self._txn_seq += 1
            txn = HttpTransaction(
                id=self._txn_seq,
                started_at=started_at_ms,
                method="CONNECT",
                url=url,
                kind="tunnel",
            )
            self._append_event_record(dict(txn.to_json(), type="txn"))
            if ok:
                self._emit_event(
                    NavigationEvent(
                        ts=self._event_ts(), url=url, opaque=True, txn_id=txn.id
                    )
                )
            return txn

    def _event_ts(self) -> int:
        # completion order is emission order; keep timestamps monotone with it
        ts = max(self.now_ms(), self._last_event_ts)
        self._last_event_ts = ts
        return ts

    def _emit_event(self, event: NavigationEvent) -> None:
        self._append_event_record(dict(event.to_json(), type="nav_event"))
        self._nav_events.append(event)
        delta = self.map.apply_event(event)
        self._append_journal({"type": "event", "ts": event.ts, "txn_id": event.txn_id})
        self._publish(delta)

    # -- edits, finalize, sessions (called by the control API) --

    def apply_edit(self, cmd: EditCommand) -> MapDelta:
        with self.lock:
            delta = self.map.apply_edit(cmd)
            now = self.now_ms()
            self._append_event_record(
                {"type": "edit", "ts": now, "command": edit_to_json(cmd)}
            )
            self._append_journal({"type": "edit", "ts": now, "command": edit_to_json(cmd)})
            self._publish(delta)
            return delta

    def finalize(self, now_ms: int | None = None) -> MapDelta | None:
        with self.lock:
            ts = now_ms if now_ms is not None else self.now_ms()
            delta = self.map.finalize_dwell(ts)
            if delta is not None:
                self._append_event_record({"type": "finalize", "ts": ts})
                self._append_journal({"type": "finalize", "ts": ts})
                self._publish(delta)
            return delta

    def save(self, path: Path | None = None) -> Path:
        with self.lock:
            target = Path(path) if path is not None else None
            if target is None:
                base = self.session_path
                if base is None:
                    raise OSError("no data directory configured and no path given")
                target = base / store.MAP_FILE
            store.save_map(self.map, target)
            if self._events_log is not None:
                self._events_log.flush()
            if self._journal_log is not None:
                self._journal_log.flush()
            return target

    def load(self, path: Path) -> SessionMap:
        loaded = store.load_map(Path(path))
        with self.lock:
            self._close_logs()
            self.map = loaded
            self.baseline_revision = loaded.revision
            self.deltas = []
            self._nav_events = []
            self._last_event_ts = loaded.started_at
            if self.config.data_dir is not None:
                self._open_session_files()
            self._publish_raw({"type": "reset", "revision": loaded.revision})
            return loaded

    def shutdown(self) -> None:
        with self.lock:
            self.finalize()
            if self.config.data_dir is not None:
                try:
                    self.save()
                except OSError as exc:
                    self.store_error = f"save failed: {exc}"
            self._close_logs()

    def _close_logs(self) -> None:
        for log in (self._events_log, self._journal_log):
            if log is not None:
                try:
                    log.close()
                except OSError:
                    pass
        self._events_log = None
        self._journal_log = None

    # -- update stream --

    def subscribe(self, since: int = 0) -> tuple[list[dict], Subscriber]:
        """Atomically fetch missed updates and join the live stream."""
        with self.lock:
            missed: list[dict] = []
            if since < self.baseline_revision:
                missed.append(dict(self.map_snapshot(), type="snapshot"))
            else:
                missed.extend(
                    d.to_json() for d in self.deltas if d.revision > since
                )
            sub = Subscriber()
            self._subscribers.append(sub)
            return missed, sub

    def unsubscribe(self, sub: Subscriber) -> None:
        with self.lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def _publish(self, delta: MapDelta) -> None:
        self.deltas.append(delta)
        self._publish_raw(delta.to_json())

    def _publish_raw(self, payload: dict) -> None:
        for sub in self._subscribers:
            try:
                sub.queue.put_nowait(payload)
            except queue.Full:
                sub.dropped = True  # slow consumer: it will be disconnected

    # -- read-side views --

    def map_snapshot(self) -> dict:
        with self.lock:
            return self.map.to_json()

    def layout_snapshot(self, options: LayoutOptions) -> PositionedLayout:
        with self.lock:
            return layout_map(self.map, options)

    def summary(self) -> dict:
        with self.lock:
            return session_summary(self.map)

    def report_for(self, date) -> DailyReport:
        tz = None
        if self.config.timezone:
            from zoneinfo import ZoneInfo

            tz = ZoneInfo(self.config.timezone)
        with self.lock:
            return daily_report(
                list(self._nav_events),
                date,
                tz=tz,
                idle_threshold_s=self.config.idle_threshold_s,
                session_id=self.map.session_id,
            )

    def status(self) -> dict:
        with self.lock:
            return {
                "ok": self.store_error is None,
                "store_error": self.store_error,
                "session_id": self.map.session_id,
                "revision": self.map.revision,
                "transactions": self._txn_seq,
            }


def _header_value(headers: list[tuple[str, str]], name: str) -> str | None:
    lname = name.lower()
    for key, value in headers:
        if key.lower() == lname:
            return value
    return None
