"""Self-evaluation reports: daily per-site interaction and time totals.

A "site" is the canonical host. Dwell for a visit is the gap to the next
navigation event in the same session, capped by the idle threshold, and
is attributed wholly to the day the visit started (midnight is not
split). The last visit of a stream contributes zero dwell until a
finalize record would close it; reports work from raw events, so it
stays zero here.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from urllib.parse import urlsplit
from zoneinfo import ZoneInfo

from .graph import DEFAULT_IDLE_THRESHOLD_S, NavigationEvent, SessionMap


@dataclass
class SiteTotals:
    host: str
    visit_count: int = 0
    dwell_seconds: float = 0.0


@dataclass
class DailyReport:
    date: dt.date
    per_site: list[SiteTotals] = field(default_factory=list)
    total_events: int = 0
    session_ids: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "per_site": [
                {"host": s.host, "visit_count": s.visit_count, "dwell_seconds": s.dwell_seconds}
                for s in self.per_site
            ],
            "total_events": self.total_events,
            "session_ids": self.session_ids,
        }


def _host_of(url: str) -> str:
    try:
        host = urlsplit(url).hostname
    except ValueError:
        host = None
    return host or url


def daily_report(
    events: list[NavigationEvent],
    date: dt.date,
    tz: ZoneInfo | dt.tzinfo | None = None,
    idle_threshold_s: float = DEFAULT_IDLE_THRESHOLD_S,
    session_id: str | None = None,
) -> DailyReport:
    """Aggregate one time-ordered event stream into a per-site day report.

    Includes exactly the events whose timestamp falls inside the given
    calendar day in ``tz`` (the system zone when omitted). Sites are
    sorted by dwell descending, then host.
    """
    tzinfo = tz if tz is not None else dt.datetime.now().astimezone().tzinfo
    day_start = dt.datetime.combine(date, dt.time.min, tzinfo=tzinfo)
    day_end = day_start + dt.timedelta(days=1)
    start_ms = int(day_start.timestamp() * 1000)
    end_ms = int(day_end.timestamp() * 1000)

    sites: dict[str, SiteTotals] = {}
    total = 0
    for i, event in enumerate(events):
        if not (start_ms <= event.ts < end_ms):
            continue
        total += 1
        site = sites.setdefault(_host_of(event.url), SiteTotals(_host_of(event.url)))
        site.visit_count += 1
        if i + 1 < len(events):
            gap_s = max(events[i + 1].ts - event.ts, 0) / 1000.0
            site.dwell_seconds += min(gap_s, idle_threshold_s)

    per_site = sorted(sites.values(), key=lambda s: (-s.dwell_seconds, s.host))
    return DailyReport(
        date=date,
        per_site=per_site,
        total_events=total,
        session_ids=[session_id] if session_id is not None and total else [],
    )


def session_summary(session_map: SessionMap) -> dict:
    """Counts, dwell totals, top pages by dwell, and the depth histogram."""
    nodes = session_map.nodes
    top = sorted(nodes.values(), key=lambda n: (-n.dwell_seconds, n.node_id))[:10]
    parents = session_map.spanning_tree()
    depth: dict[int, int] = {}
    histogram: dict[int, int] = {}
    for node_id in nodes:
        d = _depth_of(node_id, parents, depth)
        histogram[d] = histogram.get(d, 0) + 1
    return {
        "session_id": session_map.session_id,
        "node_count": len(nodes),
        "edge_count": len(session_map.edges),
        "total_visits": sum(n.visit_count for n in nodes.values()),
        "total_dwell_seconds": sum(n.dwell_seconds for n in nodes.values()),
        "top_pages": [
            {
                "id": n.node_id,
                "url": n.url,
                "title": n.title,
                "dwell_seconds": n.dwell_seconds,
                "visit_count": n.visit_count,
            }
            for n in top
        ],
        "depth_histogram": {str(k): histogram[k] for k in sorted(histogram)},
    }


def _depth_of(node_id: int, parents: dict[int, int], memo: dict[int, int]) -> int:
    if node_id in memo:
        return memo[node_id]
    chain = []
    cursor = node_id
    while cursor != 0 and cursor not in memo:
        chain.append(cursor)
        cursor = parents[cursor]
    base = 0 if cursor == 0 else memo[cursor]
    for n in reversed(chain):
        base += 1
        memo[n] = base
    return memo[node_id]


def render_daily_table(report: DailyReport) -> str:
    """Aligned plain-text table for CLI output."""
    headers = ("site", "visits", "time")
    rows = [
        (s.host, str(s.visit_count), _format_duration(s.dwell_seconds))
        for s in report.per_site
    ]
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rows)) if rows else len(headers[i])
        for i in range(3)
    ]
    lines = [
        f"Daily report for {report.date.isoformat()}"
        + (f" (sessions: {', '.join(report.session_ids)})" if report.session_ids else ""),
        "",
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append(
            row[0].ljust(widths[0])
            + "  "
            + row[1].rjust(widths[1])
            + "  "
            + row[2].rjust(widths[2])
        )
    if not rows:
        lines.append("(no navigation events)")
    lines.append("")
    lines.append(f"total page visits: {report.total_events}")
    return "\n".join(lines)


def _format_duration(seconds: float) -> str:
    total = int(round(seconds))
    h, rem = divmod(total, 3600)
    m, s = divmod(rem, 60)
    if h:
        return f"{h}h{m:02d}m{s:02d}s"
    if m:
        return f"{m}m{s:02d}s"
    return f"{s}s"
