"""Local control API: map snapshots, layouts, edits, reports, live updates.

Speaks plain HTTP/1.1 + JSON on the control address, loopback-only unless
explicitly opened up. The update stream is line-delimited JSON over a
chunked response: one line per map delta in revision order, with a
heartbeat line when nothing has happened for a while. The built UI, when
present, is served from GET / so one process serves everything.
"""

from __future__ import annotations

import datetime as dt
import json
import mimetypes
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from .graph import CycleError, NotFoundError, edit_from_json
from .layout import LayoutOptions
from .store import ParseError, VersionError, export_dot, export_svg

HEARTBEAT_S = 15.0

_CODE_STATUS = {
    "not_found": 404,
    "cycle": 422,
    "bad_request": 422,
    "version": 409,
    "io": 503,
}

_LOOPBACK = ("127.0.0.1", "::1", "::ffff:127.0.0.1")


class ApiError(Exception):
    def __init__(self, code: str, message: str, detail=None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.detail = detail

    @property
    def status(self) -> int:
        return _CODE_STATUS[self.code]

    def to_json(self) -> dict:
        return {"code": self.code, "message": self.message, "detail": self.detail}


class ControlServer:
    def __init__(self, config, runtime):
        self.config = config
        self.runtime = runtime
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self.bound_port: int | None = None

    def start(self) -> tuple[str, int]:
        self.handler_class = _make_handler(self.config, self.runtime)
        self._httpd = ThreadingHTTPServer(
            (self.config.control_host, self.config.control_port), self.handler_class
        )
        self._httpd.daemon_threads = True
        self.bound_port = self._httpd.server_port
        self._thread = threading.Thread(
            target=lambda: self._httpd.serve_forever(poll_interval=0.1),
            name="control-api",
            daemon=True,
        )
        self._thread.start()
        return self._httpd.server_address[0], self.bound_port

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2)

    def __enter__(self) -> "ControlServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def _make_handler(config, runtime):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "wayfinder-control"
        heartbeat_s = HEARTBEAT_S

        # -- plumbing --

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _refuse_remote(self) -> bool:
            if config.control_allow_remote:
                return False
            if self.client_address[0] in _LOOPBACK:
                return False
            self._send_json({"code": "bad_request", "message": "remote access disabled"}, 403)
            return True

        def _send_json(self, payload, status: int = 200) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_text(self, text: str, content_type: str, status: int = 200) -> None:
            body = text.encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_error_obj(self, err: ApiError) -> None:
            self._send_json(err.to_json(), err.status)

        def _read_json_body(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if not raw:
                return {}
            try:
                return json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ApiError("bad_request", f"body is not valid JSON: {exc}")

        def _query(self) -> dict:
            return parse_qs(urlsplit(self.path).query)

        def _param(self, name: str, default: str | None = None) -> str | None:
            values = self._query().get(name)
            return values[0] if values else default

        # -- routing --

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self._refuse_remote():
                return
            path = urlsplit(self.path).path
            try:
                if path == "/api/map":
                    self._send_json(runtime.map_snapshot())
                elif path == "/api/layout":
                    self._send_json(runtime.layout_snapshot(self._layout_options()).to_json())
                elif path == "/api/reports/daily":
                    self._get_daily_report()
                elif path == "/api/reports/summary":
                    self._send_json(runtime.summary())
                elif path == "/api/export.dot":
                    with runtime.lock:
                        text = export_dot(runtime.map)
                    self._send_text(text, "text/vnd.graphviz")
                elif path == "/api/export.svg":
                    layout = runtime.layout_snapshot(self._layout_options())
                    self._send_text(export_svg(layout), "image/svg+xml")
                elif path == "/api/cache/stats":
                    self._send_json(runtime.cache.stats())
                elif path == "/api/status":
                    self._send_json(runtime.status())
                elif path == "/api/updates":
                    self._stream_updates()
                elif path.startswith("/api/"):
                    raise ApiError("not_found", f"no endpoint {path}")
                else:
                    self._serve_static(path)
            except ApiError as err:
                self._send_error_obj(err)
            except (BrokenPipeError, ConnectionResetError):
                pass

        def do_POST(self):
            if self._refuse_remote():
                return
            path = urlsplit(self.path).path
            try:
                if path == "/api/edit":
                    self._post_edit()
                elif path == "/api/session/save":
                    self._post_save()
                elif path == "/api/session/load":
                    self._post_load()
                else:
                    raise ApiError("not_found", f"no endpoint {path}")
            except ApiError as err:
                self._send_error_obj(err)
            except (BrokenPipeError, ConnectionResetError):
                pass

        # -- endpoint bodies --

        def _layout_options(self) -> LayoutOptions:
            depth_text = self._param("depth")
            try:
                depth = int(depth_text) if depth_text else None
            except ValueError:
                raise ApiError("bad_request", f"bad depth {depth_text!r}")
            options = LayoutOptions(
                level=self._param("level", "page"),
                max_depth=depth,
                display_mode=self._param("mode", "title"),
            )
            try:
                options.validate()
            except ValueError as exc:
                raise ApiError("bad_request", str(exc))
            return options

        def _get_daily_report(self):
            date_text = self._param("date")
            if not date_text:
                raise ApiError("bad_request", "missing date parameter")
            try:
                date = dt.date.fromisoformat(date_text)
            except ValueError:
                raise ApiError("bad_request", f"bad date {date_text!r}")
            self._send_json(runtime.report_for(date).to_json())

        def _post_edit(self):
            data = self._read_json_body()
            try:
                cmd = edit_from_json(data)
            except ValueError as exc:
                raise ApiError("bad_request", str(exc))
            try:
                delta = runtime.apply_edit(cmd)
            except NotFoundError as exc:
                raise ApiError("not_found", str(exc))
            except CycleError as exc:
                raise ApiError("cycle", str(exc))
            except ValueError as exc:
                raise ApiError("bad_request", str(exc))
            self._send_json(delta.to_json())

        def _post_save(self):
            data = self._read_json_body()
            path = data.get("path")
            try:
                target = runtime.save(Path(path) if path else None)
            except OSError as exc:
                raise ApiError("io", f"save failed: {exc}")
            self._send_json({"saved": str(target), "revision": runtime.map.revision})

        def _post_load(self):
            data = self._read_json_body()
            path = data.get("path")
            if not path:
                raise ApiError("bad_request", "missing path")
            try:
                loaded = runtime.load(Path(path))
            except FileNotFoundError:
                raise ApiError("not_found", f"no session file at {path}")
            except VersionError as exc:
                raise ApiError("version", str(exc))
            except ParseError as exc:
                raise ApiError("bad_request", str(exc), detail={"offset": exc.offset})
            except OSError as exc:
                raise ApiError("io", f"load failed: {exc}")
            self._send_json({"loaded": loaded.session_id, "revision": loaded.revision})

        # -- update stream --

        def _stream_updates(self):
            since_text = self._param("since", "0")
            try:
                since = int(since_text)
            except ValueError:
                raise ApiError("bad_request", f"bad since {since_text!r}")
            missed, sub = runtime.subscribe(since)
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Cache-Control", "no-store")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Transfer-Encoding", "chunked")
            self.end_headers()
            try:
                for payload in missed:
                    self._write_chunk(payload)
                while not sub.dropped:
                    try:
                        payload = sub.queue.get(timeout=self.heartbeat_s)
                    except queue.Empty:
                        payload = {"type": "heartbeat", "revision": runtime.map.revision}
                    self._write_chunk(payload)
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                runtime.unsubscribe(sub)
                try:
                    self.wfile.write(b"0\r\n\r\n")
                except OSError:
                    pass
                self.close_connection = True

        def _write_chunk(self, payload: dict) -> None:
            data = json.dumps(payload).encode("utf-8") + b"\n"
            self.wfile.write(f"{len(data):x}\r\n".encode("ascii") + data + b"\r\n")
            self.wfile.flush()

        # -- static UI --

        def _serve_static(self, path: str):
            ui_dir = config.ui_dir
            if ui_dir is None:
                if path == "/":
                    self._send_text(_NO_UI_PAGE, "text/html")
                    return
                raise ApiError("not_found", f"no file {path}")
            base = Path(ui_dir).resolve()
            rel = path.lstrip("/") or "index.html"
            target = (base / rel).resolve()
            if base not in target.parents and target != base:
                raise ApiError("not_found", "path escapes UI directory")
            if target.is_dir():
                target = target / "index.html"
            if not target.is_file():
                raise ApiError("not_found", f"no file {path}")
            content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            body = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


_NO_UI_PAGE = """<!DOCTYPE html>
<html><head><title>wayfinder</title></head>
<body style="font-family: sans-serif; margin: 3em;">
<h1>wayfinder control API</h1>
<p>The map UI is not built. Endpoints live under <code>/api/</code>:
map, layout, edit, session/save, session/load, reports/daily, export.dot,
export.svg, cache/stats, status, updates.</p>
</body></html>
"""
