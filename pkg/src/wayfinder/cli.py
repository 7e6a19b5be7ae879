"""Command line entry point: run the proxy + control API, or print reports."""

from __future__ import annotations

import argparse
import datetime as dt
import os
import signal
import sys
import threading
import time
from pathlib import Path

from . import __version__, store
from .api import ControlServer
from .config import DEFAULT_CONTROL_PORT, DEFAULT_LISTEN_PORT, ConfigError, ProxyConfig
from .graph import NavigationEvent, seed_from_list
from .proxy import ProxyServer
from .reports import daily_report, render_daily_table
from .runtime import SessionRuntime

CACHE_SWEEP_INTERVAL_S = 60.0


def _parse_hostport(text: str, default_port: int) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host or "127.0.0.1", int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wayfinder",
        description=(
            "Local HTTP forward proxy that builds a live map of your browsing. "
            "Point your browser's HTTP proxy at the listen address, then open "
            "the control address for the map."
        ),
    )
    parser.add_argument("--listen", default=f"127.0.0.1:{DEFAULT_LISTEN_PORT}",
                        help="proxy listen address (host:port)")
    parser.add_argument("--control", default=f"127.0.0.1:{DEFAULT_CONTROL_PORT}",
                        help="control API address (host:port)")
    parser.add_argument("--data-dir", default=None,
                        help="session storage directory (env WAYFINDER_DATA_DIR, "
                             "default ~/.wayfinder)")
    parser.add_argument("--idle-threshold", type=float, default=300.0, metavar="SECONDS",
                        help="dwell gap cap per page visit")
    parser.add_argument("--cache-max-residence", type=float, default=3600.0, metavar="SECONDS",
                        help="max time a document may stay cached")
    parser.add_argument("--cache-max-idle", type=float, default=600.0, metavar="SECONDS",
                        help="max time a cached document may go unused")
    parser.add_argument("--cache-capacity", type=int, default=256 * 1024 * 1024, metavar="BYTES",
                        help="cache size bound in bytes")
    parser.add_argument("--session", default=None, metavar="PATH",
                        help="existing session to reopen (map.json or session directory)")
    parser.add_argument("--seed", default=None, metavar="FILE",
                        help="start from a guided-tour map: file with one URL per line")
    parser.add_argument("--timezone", default=None,
                        help="IANA timezone for daily reports (default: system)")
    parser.add_argument("--control-allow-remote", action="store_true",
                        help="allow non-loopback clients on the control API")
    parser.add_argument("--ui-dir", default=None, metavar="DIR",
                        help="built UI assets to serve at / (default: frontend/dist if present)")
    parser.add_argument("--report", default=None, metavar="daily:YYYY-MM-DD",
                        help="print a report for a saved session and exit (needs --session)")
    parser.add_argument("--version", action="version", version=f"wayfinder {__version__}")
    return parser


def _resolve_data_dir(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get("WAYFINDER_DATA_DIR")
    if env:
        return Path(env)
    return Path.home() / ".wayfinder"


def _resolve_session_path(arg: str, data_dir: Path) -> Path:
    path = Path(arg)
    if path.is_dir():
        return path / store.MAP_FILE
    if path.exists():
        return path
    candidate = store.session_dir(data_dir, arg) / store.MAP_FILE
    if candidate.exists():
        return candidate
    raise FileNotFoundError(f"no session at {arg!r}")


def _run_report(args, data_dir: Path) -> int:
    if not args.report.startswith("daily:"):
        print(f"unknown report {args.report!r}; expected daily:YYYY-MM-DD", file=sys.stderr)
        return 2
    try:
        date = dt.date.fromisoformat(args.report.split(":", 1)[1])
    except ValueError as exc:
        print(f"bad report date: {exc}", file=sys.stderr)
        return 2
    if not args.session:
        print("--report needs --session to know which log to read", file=sys.stderr)
        return 2
    map_path = _resolve_session_path(args.session, data_dir)
    events_path = map_path.parent / store.EVENTS_FILE
    events = []
    session_id = None
    if events_path.exists():
        for record in store.read_log(events_path):
            if record.get("type") == "session":
                session_id = record.get("session_id")
            elif record.get("type") == "nav_event":
                events.append(NavigationEvent.from_json(record))
    tz = None
    if args.timezone:
        from zoneinfo import ZoneInfo

        tz = ZoneInfo(args.timezone)
    report = daily_report(
        events, date, tz=tz, idle_threshold_s=args.idle_threshold, session_id=session_id
    )
    print(render_daily_table(report))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    data_dir = _resolve_data_dir(args.data_dir)

    if args.report:
        try:
            return _run_report(args, data_dir)
        except (FileNotFoundError, store.ParseError) as exc:
            print(str(exc), file=sys.stderr)
            return 1

    listen_host, listen_port = _parse_hostport(args.listen, DEFAULT_LISTEN_PORT)
    control_host, control_port = _parse_hostport(args.control, DEFAULT_CONTROL_PORT)
    ui_dir = Path(args.ui_dir) if args.ui_dir else None
    if ui_dir is None:
        bundled = Path("frontend/dist")
        if bundled.is_dir():
            ui_dir = bundled

    config = ProxyConfig(
        listen_host=listen_host,
        listen_port=listen_port,
        control_host=control_host,
        control_port=control_port,
        idle_threshold_s=args.idle_threshold,
        cache_max_residence_s=args.cache_max_residence,
        cache_max_idle_s=args.cache_max_idle,
        cache_capacity_bytes=args.cache_capacity,
        data_dir=data_dir,
        timezone=args.timezone,
        control_allow_remote=args.control_allow_remote,
        ui_dir=ui_dir,
    )
    try:
        config.validate()
    except ConfigError as exc:
        print(f"bad configuration: {exc}", file=sys.stderr)
        return 2

    session_map = None
    if args.session:
        try:
            session_map = store.load_map(_resolve_session_path(args.session, data_dir))
        except (FileNotFoundError, store.ParseError, store.VersionError) as exc:
            print(f"cannot reopen session: {exc}", file=sys.stderr)
            return 1
    elif args.seed:
        try:
            urls = [
                line.strip()
                for line in Path(args.seed).read_text(encoding="utf-8").splitlines()
                if line.strip() and not line.strip().startswith("#")
            ]
            session_map = seed_from_list(
                urls,
                started_at=int(time.time() * 1000),
                idle_threshold_s=args.idle_threshold,
            )
        except (OSError, ValueError) as exc:
            print(f"cannot seed session: {exc}", file=sys.stderr)
            return 1

    runtime = SessionRuntime(config, session_map=session_map)
    proxy = ProxyServer(config, runtime)
    control = ControlServer(config, runtime)

    proxy_addr = proxy.start()
    control_addr = control.start()
    print(f"proxy listening on {proxy_addr[0]}:{proxy_addr[1]}")
    print(f"control API + map UI on http://{control_addr[0]}:{control_addr[1]}/")
    print(f"session {runtime.map.session_id} in {runtime.session_path}")
    print("configure your browser to use the proxy address above, then browse")

    stop = threading.Event()

    def _handle_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, _handle_signal)
    signal.signal(signal.SIGTERM, _handle_signal)

    last_sweep = time.monotonic()
    while not stop.is_set():
        stop.wait(timeout=1.0)
        if time.monotonic() - last_sweep >= CACHE_SWEEP_INTERVAL_S:
            runtime.cache.sweep(time.time())
            last_sweep = time.monotonic()

    print("shutting down: closing dwell and saving the session map")
    proxy.stop()
    control.stop()
    runtime.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
