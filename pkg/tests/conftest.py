"""Shared fixtures: a scripted local origin, a live proxy, and a fake clock."""

import hashlib
import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from wayfinder.api import ControlServer
from wayfinder.config import ProxyConfig
from wayfinder.proxy import ProxyServer
from wayfinder.runtime import SessionRuntime


def deterministic_bytes(seed: int, n: int) -> bytes:
    return random.Random(seed).randbytes(n)


class FakeClock:
    def __init__(self, start: float = 1_700_000_000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


class OriginState:
    """Mutable knobs the tests poke at while the origin runs."""

    def __init__(self):
        self.doc_version = 1
        self.request_counts = {}
        self.lock = threading.Lock()

    def bump(self):
        with self.lock:
            self.doc_version += 1

    def count(self, path):
        with self.lock:
            self.request_counts[path] = self.request_counts.get(path, 0) + 1
            return self.request_counts[path]


def _make_origin_handler(state: OriginState):
    class OriginHandler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _send(self, status, body, content_type="text/plain", extra=()):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            for name, value in extra:
                self.send_header(name, value)
            self.end_headers()
            self.wfile.write(body)

        def _send_chunked(self, body, content_type="application/octet-stream"):
            self.send_response(200)
            self.send_header("Content-Type", content_type)
            self.send_header("Transfer-Encoding", "chunked")
            self.end_headers()
            for i in range(0, len(body), 7919):
                chunk = body[i : i + 7919]
                self.wfile.write(f"{len(chunk):x}\r\n".encode() + chunk + b"\r\n")
            self.wfile.write(b"0\r\n\r\n")

        def do_GET(self):
            state.count(self.path)
            parts = self.path.lstrip("/").split("/")
            if parts[0] == "bytes" and len(parts) == 3:
                body = deterministic_bytes(int(parts[1]), int(parts[2]))
                self._send(200, body, "application/octet-stream")
            elif parts[0] == "chunked" and len(parts) == 3:
                body = deterministic_bytes(int(parts[1]), int(parts[2]))
                self._send_chunked(body)
            elif parts[0] == "page":
                name = parts[1] if len(parts) > 1 else "home"
                links = "".join(
                    f'<a href="/page/{name}-{i}">go</a>' for i in range(2)
                )
                body = f"<html><head><title>{name}</title></head><body>{links}</body></html>".encode()
                self._send(200, body, "text/html; charset=utf-8")
            elif parts[0] == "asset":
                self._send(200, b"\x89PNG fake image", "image/png")
            elif parts[0] == "styles":
                self._send(200, b"body{}", "text/css")
            elif parts[0] == "redirect":
                self.send_response(302)
                self.send_header("Location", "/page/target")
                self.send_header("Content-Length", "0")
                self.end_headers()
            elif parts[0] == "rev":
                version = state.doc_version
                last_modified = f"Mon, 0{version} Jan 2024 00:00:00 GMT"
                if self.headers.get("If-Modified-Since") == last_modified:
                    self.send_response(304)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                body = f"<html><head><title>rev v{version}</title></head></html>".encode()
                self._send(
                    200, body, "text/html", extra=[("Last-Modified", last_modified)]
                )
            elif parts[0] == "nostore":
                self._send(
                    200,
                    b"<html><head><title>secret</title></head></html>",
                    "text/html",
                    extra=[("Cache-Control", "no-store")],
                )
            elif parts[0] == "gzipped":
                import gzip

                raw = b"<html><head><title>squeezed</title></head></html>"
                body = gzip.compress(raw)
                self._send(
                    200, body, "text/html", extra=[("Content-Encoding", "gzip")]
                )
            elif parts[0] == "headers":
                body = json.dumps(dict(self.headers.items())).encode()
                self._send(200, body, "application/json", extra=[("X-Origin", "yes")])
            else:
                self._send(404, b"not found")

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length)
            digest = hashlib.sha256(body).hexdigest()[:12]
            state.count(self.path)
            page = f"<html><head><title>posted {digest}</title></head></html>".encode()
            self._send(200, page, "text/html")

        def do_HEAD(self):
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.send_header("Content-Length", "5")
            self.end_headers()

    return OriginHandler


class Origin:
    def __init__(self):
        self.state = OriginState()
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _make_origin_handler(self.state))
        self.httpd.daemon_threads = True
        self.port = self.httpd.server_port
        self.thread = threading.Thread(
            target=lambda: self.httpd.serve_forever(poll_interval=0.05), daemon=True
        )
        self.thread.start()

    @property
    def host(self) -> str:
        return f"127.0.0.1:{self.port}"

    def url(self, path: str) -> str:
        return f"http://127.0.0.1:{self.port}{path}"

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture()
def origin():
    server = Origin()
    yield server
    server.stop()


@pytest.fixture()
def clock():
    return FakeClock()


def make_stack(tmp_path=None, clock=None, **config_kw):
    """A runtime + proxy pair on ephemeral ports; caller stops the proxy."""
    config = ProxyConfig(
        listen_port=0,
        control_port=0,
        data_dir=tmp_path,
        **config_kw,
    )
    runtime = SessionRuntime(config, clock=clock)
    proxy = ProxyServer(config, runtime)
    proxy.start()
    return config, runtime, proxy


@pytest.fixture()
def stack(tmp_path, clock):
    config, runtime, proxy = make_stack(
        tmp_path, clock, cache_max_residence_s=100.0, cache_max_idle_s=100.0
    )
    yield config, runtime, proxy
    proxy.stop()
    runtime.shutdown()


@pytest.fixture()
def control_stack(tmp_path, clock):
    config, runtime, proxy = make_stack(
        tmp_path, clock, cache_max_residence_s=100.0, cache_max_idle_s=100.0
    )
    control = ControlServer(config, runtime)
    control.start()
    yield config, runtime, proxy, control
    control.stop()
    proxy.stop()
    runtime.shutdown()
