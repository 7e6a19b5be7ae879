"""wayfinder: a local intercepting proxy that maps your browsing session.

Point an unmodified browser at the proxy; wayfinder records every page
visit, folds visits into a directed navigation map with dwell times,
caches documents, and serves the live map to an interactive UI through
a local control API.
"""

__version__ = "0.1.0"

from .classify import CanonicalUrl, extract_title, is_page_navigation, normalize_url
from .config import ProxyConfig
from .graph import (
    MapDelta,
    NavEdge,
    NavigationEvent,
    PageNode,
    SessionMap,
    seed_from_list,
)
from .layout import LayoutOptions, PositionedLayout, aggregate_hosts, layout_map
from .reports import DailyReport, daily_report, session_summary

__all__ = [
    "CanonicalUrl",
    "DailyReport",
    "LayoutOptions",
    "MapDelta",
    "NavEdge",
    "NavigationEvent",
    "PageNode",
    "PositionedLayout",
    "ProxyConfig",
    "SessionMap",
    "aggregate_hosts",
    "daily_report",
    "extract_title",
    "is_page_navigation",
    "layout_map",
    "normalize_url",
    "seed_from_list",
    "session_summary",
    "__version__",
]
