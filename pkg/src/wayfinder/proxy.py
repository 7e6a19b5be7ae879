"""HTTP/1.1 forward proxy: intercept, forward or serve from cache, tunnel.

One thread per client connection; requests are parsed from the socket,
matched against the response cache (GET only), and otherwise forwarded
to the origin with hop-by-hop headers stripped and a Via entry added.
CONNECT is tunneled blindly - TLS is never decrypted - and surfaces as a
single opaque host-level visit. Every completed request is handed to the
session runtime, which owns transaction ids and event emission order.

Bodies are buffered whole: framing to the client is always
Content-Length (chunked origin responses are decoded by http.client and
re-framed), which keeps byte fidelity simple and gives the cache and the
title extractor the data they need.
"""

from __future__ import annotations

import http.client
import select
import socket
import threading
import zlib
from dataclasses import dataclass

from .cache import CacheEntry, Hit, cache_key, cacheable_response
from .classify import CanonicalUrl, UrlError, normalize_url

VIA_TOKEN = "1.1 wayfinder"
MAX_HEAD_BYTES = 64 * 1024
CLIENT_TIMEOUT_S = 120.0
ORIGIN_TIMEOUT_S = 30.0
TITLE_PREFIX_BYTES = 64 * 1024

HOP_BY_HOP = frozenset(
    {
        "connection",
        "keep-alive",
        "proxy-authenticate",
        "proxy-authorization",
        "te",
        "trailer",
        "transfer-encoding",
        "upgrade",
        "proxy-connection",
    }
)

SUPPORTED_METHODS = frozenset(
    {"GET", "HEAD", "POST", "PUT", "DELETE", "OPTIONS", "PATCH", "CONNECT"}
)

STATUS_REASONS = {
    400: "Bad Request",
    501: "Not Implemented",
    502: "Bad Gateway",
    504: "Gateway Timeout",
}


class ProxyHttpError(Exception):
    """Terminate the current request with an HTTP error response."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass
class HttpTransaction:
    """One proxied request, as appended to the event log."""

    id: int
    started_at: int  # ms since epoch
    method: str
    url: str
    referer: str | None = None
    status: int | None = None
    content_type: str | None = None
    body_bytes: int = 0
    served_from_cache: bool = False
    kind: str = "plain"  # plain | tunnel
    accept: str | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "started_at": self.started_at,
            "method": self.method,
            "url": self.url,
            "referer": self.referer,
            "status": self.status,
            "content_type": self.content_type,
            "body_bytes": self.body_bytes,
            "served_from_cache": self.served_from_cache,
            "kind": self.kind,
            "accept": self.accept,
        }


@dataclass
class RequestHead:
    method: str
    target: str
    version: str
    headers: list[tuple[str, str]]

    def header(self, name: str) -> str | None:
        lname = name.lower()
        for key, value in self.headers:
            if key.lower() == lname:
                return value
        return None


# forward decisions ----------------------------------------------------------


@dataclass
class ServeFromCache:
    key: str
    entry: CacheEntry
    revalidate: bool = False


@dataclass
class ForwardToOrigin:
    host: str
    port: int
    origin_path: str
    canonical: CanonicalUrl | None
    cacheable_key: str | None = None


@dataclass
class OpenTunnel:
    host: str
    port: int


ForwardDecision = ServeFromCache | ForwardToOrigin | OpenTunnel


# header and framing helpers ---------------------------------------------------


def strip_hop_headers(headers: list[tuple[str, str]]) -> list[tuple[str, str]]:
    """Drop hop-by-hop headers (plus any named by Connection), append Via."""
    connection_named = set()
    for name, value in headers:
        if name.lower() == "connection":
            connection_named.update(t.strip().lower() for t in value.split(",") if t.strip())
    out = [
        (name, value)
        for name, value in headers
        if name.lower() not in HOP_BY_HOP and name.lower() not in connection_named
    ]
    out.append(("Via", VIA_TOKEN))
    return out


def read_head(rfile) -> RequestHead | None:
    """Parse a request head from the stream; None on clean EOF."""
    line = rfile.readline(MAX_HEAD_BYTES + 1)
    if not line:
        return None
    if len(line) > MAX_HEAD_BYTES:
        raise ProxyHttpError(400, "request line too long")
    try:
        text = line.decode("iso-8859-1").rstrip("\r\n")
    except UnicodeDecodeError:
        raise ProxyHttpError(400, "undecodable request line")
    parts = text.split(" ")
    if len(parts) != 3 or not parts[0] or not parts[1]:
        raise ProxyHttpError(400, f"malformed request line: {text!r}")
    method, target, version = parts
    if not version.startswith("HTTP/"):
        raise ProxyHttpError(400, f"bad protocol version: {version!r}")

    headers: list[tuple[str, str]] = []
    total = len(line)
    while True:
        raw = rfile.readline(MAX_HEAD_BYTES + 1)
        total += len(raw)
        if total > MAX_HEAD_BYTES:
            raise ProxyHttpError(400, "header section too large")
        if raw in (b"\r\n", b"\n", b""):
            break
        decoded = raw.decode("iso-8859-1").rstrip("\r\n")
        if decoded and decoded[0] in " \t" and headers:
            name, value = headers[-1]  # obs-fold continuation
            headers[-1] = (name, value + " " + decoded.strip())
            continue
        if ":" not in decoded:
            raise ProxyHttpError(400, f"malformed header line: {decoded!r}")
        name, _, value = decoded.partition(":")
        if not name or name.strip() != name:
            raise ProxyHttpError(400, f"malformed header name: {name!r}")
        headers.append((name, value.strip()))
    return RequestHead(method=method, target=target, version=version, headers=headers)


def read_body(rfile, head: RequestHead) -> bytes:
    """Read a request body per its framing; chunked bodies are decoded."""
    te = head.header("Transfer-Encoding")
    if te and "chunked" in te.lower():
        return _read_chunked(rfile)
    cl = head.header("Content-Length")
    if cl is None:
        return b""
    try:
        length = int(cl)
    except ValueError:
        raise ProxyHttpError(400, f"bad Content-Length: {cl!r}")
    if length < 0:
        raise ProxyHttpError(400, "negative Content-Length")
    body = rfile.read(length)
    if len(body) != length:
        raise ProxyHttpError(400, "request body ended early")
    return body


def _read_chunked(rfile) -> bytes:
    chunks = []
    while True:
        size_line = rfile.readline(1024)
        if not size_line:
            raise ProxyHttpError(400, "chunked body ended early")
        try:
            size = int(size_line.split(b";", 1)[0].strip(), 16)
        except ValueError:
            raise ProxyHttpError(400, f"bad chunk size: {size_line!r}")
        if size == 0:
            while True:  # swallow trailers
                trailer = rfile.readline(MAX_HEAD_BYTES)
                if trailer in (b"\r\n", b"\n", b""):
                    break
            return b"".join(chunks)
        data = rfile.read(size)
        if len(data) != size:
            raise ProxyHttpError(400, "chunk ended early")
        chunks.append(data)
        rfile.read(2)  # trailing CRLF


def parse_connect_target(target: str) -> tuple[str, int]:
    host, sep, port_text = target.rpartition(":")
    if not sep:
        return target.strip().lower(), 443
    try:
        port = int(port_text)
    except ValueError:
        raise ProxyHttpError(400, f"bad CONNECT target: {target!r}")
    return host.strip().lower().strip("[]"), port


def parse_plain_target(head: RequestHead) -> tuple[str, int, str, CanonicalUrl | None]:
    """Resolve origin host, port and origin-form path from a request head.

    Accepts absolute-form targets (the proxy protocol) and falls back to
    origin-form plus Host for clients that are configured loosely. The
    canonical URL is None when normalization fails; such requests are
    still proxied, just never classified as navigations.
    """
    target = head.target
    if target.startswith("/"):
        host_header = head.header("Host")
        if not host_header:
            raise ProxyHttpError(400, "origin-form request without Host header")
        target = f"http://{host_header}{target}"
    try:
        canonical = normalize_url(target)
    except UrlError:
        canonical = None
    if canonical is None or canonical.scheme not in ("http", "https"):
        # still forward if we can find a host to talk to
        host_header = head.header("Host")
        if not host_header:
            raise ProxyHttpError(400, f"cannot resolve origin for target {target!r}")
        host, _, port_text = host_header.partition(":")
        port = int(port_text) if port_text.isdigit() else 80
        path = target if target.startswith("/") else "/"
        return host.lower(), port, path, None
    if canonical.scheme == "https":
        raise ProxyHttpError(400, "https targets must use CONNECT")
    port = canonical.port if canonical.port is not None else 80
    path = canonical.path + (f"?{canonical.query}" if canonical.query is not None else "")
    return canonical.host, port, path, canonical


def decode_for_inspection(body: bytes, headers: list[tuple[str, str]]) -> bytes:
    """Best-effort content-decoding of a body prefix for title extraction."""
    encoding = None
    for name, value in headers:
        if name.lower() == "content-encoding":
            encoding = value.strip().lower()
            break
    window = body[: TITLE_PREFIX_BYTES * 4]
    if encoding in (None, "", "identity"):
        return body[:TITLE_PREFIX_BYTES]
    try:
        if encoding == "gzip":
            return zlib.decompressobj(16 + zlib.MAX_WBITS).decompress(window, TITLE_PREFIX_BYTES)
        if encoding == "deflate":
            return zlib.decompressobj().decompress(window, TITLE_PREFIX_BYTES)
    except zlib.error:
        pass
    return b""


# the server -------------------------------------------------------------------


class ProxyServer:
    """Threaded forward proxy bound to the configured listen address."""

    def __init__(self, config, runtime):
        self.config = config
        self.runtime = runtime
        self.cache = runtime.cache
        self._sock: socket.socket | None = None
        self._stopping = threading.Event()
        self._thread: threading.Thread | None = None
        self.bound_port: int | None = None

    def start(self) -> tuple[str, int]:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self.config.listen_host, self.config.listen_port))
        sock.listen(64)
        sock.settimeout(0.2)  # lets the accept loop notice stop requests
        self._sock = sock
        self.bound_port = sock.getsockname()[1]
        self._thread = threading.Thread(target=self._serve_loop, name="proxy-accept", daemon=True)
        self._thread.start()
        return sock.getsockname()[0], self.bound_port

    def stop(self) -> None:
        self._stopping.set()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._thread is not None:
            self._thread.join(timeout=2)

    def _serve_loop(self) -> None:
        assert self._sock is not None
        while not self._stopping.is_set():
            try:
                client, addr = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return  # listener closed
            thread = threading.Thread(
                target=self._handle_connection, args=(client, addr), daemon=True
            )
            thread.start()

    # -- per-connection --

    def _handle_connection(self, client: socket.socket, addr) -> None:
        client.settimeout(CLIENT_TIMEOUT_S)
        rfile = client.makefile("rb")
        try:
            while not self._stopping.is_set():
                try:
                    head = read_head(rfile)
                except ProxyHttpError as exc:
                    self._send_error(client, exc.status, str(exc))
                    return
                except (socket.timeout, OSError):
                    return
                if head is None:
                    return
                try:
                    keep_alive = self._dispatch(client, rfile, head)
                except ProxyHttpError as exc:
                    self._send_error(client, exc.status, str(exc))
                    return
                except (socket.timeout, OSError):
                    return
                if not keep_alive:
                    return
        finally:
            try:
                rfile.close()
            except OSError:
                pass
            try:
                client.close()
            except OSError:
                pass

    def intercept(self, head: RequestHead, now: float) -> ForwardDecision:
        """Decide how to satisfy a request: cache, origin, or tunnel."""
        if head.method not in SUPPORTED_METHODS:
            raise ProxyHttpError(501, f"method not supported: {head.method}")
        if head.method == "CONNECT":
            host, port = parse_connect_target(head.target)
            return OpenTunnel(host, port)
        host, port, path, canonical = parse_plain_target(head)
        key = cache_key(head.method, canonical.text) if canonical is not None else None
        if key is not None:
            found = self.cache.lookup(key, now)
            if isinstance(found, Hit):
                return ServeFromCache(key, found.entry, revalidate=found.revalidate)
        return ForwardToOrigin(host, port, path, canonical, cacheable_key=key)

    def _dispatch(self, client: socket.socket, rfile, head: RequestHead) -> bool:
        started_at = self.runtime.now_ms()
        decision = self.intercept(head, started_at / 1000.0)
        if isinstance(decision, OpenTunnel):
            self._run_tunnel(client, head, decision, started_at)
            return False  # the tunnel consumed the connection
        body = read_body(rfile, head)
        if isinstance(decision, ServeFromCache):
            return self._serve_cache(client, head, decision, started_at)
        return self._forward(client, head, body, decision, started_at)

    # -- plain requests --

    def _serve_cache(
        self, client: socket.socket, head: RequestHead, decision: ServeFromCache, started_at: int
    ) -> bool:
        entry = decision.entry
        now = started_at / 1000.0
        if decision.revalidate:
            refreshed = self._revalidate(head, decision, now)
            if refreshed is not None:
                return self._finish_plain(client, head, *refreshed, started_at=started_at)
        self.runtime.record_plain(
            started_at_ms=started_at,
            head=head,
            status=entry.status,
            response_headers=entry.headers,
            body=entry.body,
            served_from_cache=True,
            canonical=_canonical_text(head),
        )
        self._send_response(client, head, entry.status, entry.headers, entry.body)
        return _wants_keep_alive(head)

    def _revalidate(self, head: RequestHead, decision: ServeFromCache, now: float):
        """Conditional GET against the origin; None means keep the cached copy."""
        entry = decision.entry
        try:
            host, port, path, canonical = parse_plain_target(head)
        except ProxyHttpError:
            return None
        cond_headers = [
            (name, value)
            for name, value in strip_hop_headers(head.headers)
            if name.lower() not in ("if-modified-since", "if-none-match", "range")
        ]
        cond_headers.append(("If-Modified-Since", entry.origin_last_modified))
        try:
            status, headers, body = _origin_exchange(host, port, "GET", path, cond_headers, b"")
        except OSError:
            return None  # origin unreachable: serve the stale copy
        if status == 304:
            self.cache.refresh(decision.key, now)
            return None
        self.cache.invalidate_stale(decision.key)
        clean = strip_hop_headers(headers)
        if cacheable_response(status, clean):
            self.cache.insert(
                decision.key,
                CacheEntry(
                    key=decision.key,
                    status=status,
                    headers=clean,
                    body=body,
                    origin_last_modified=_header(clean, "Last-Modified"),
                ),
                now,
            )
        return status, clean, body

    def _forward(
        self,
        client: socket.socket,
        head: RequestHead,
        body: bytes,
        decision: ForwardToOrigin,
        started_at: int,
    ) -> bool:
        out_headers = strip_hop_headers(head.headers)
        if head.header("Host") is None:
            port = "" if decision.port == 80 else f":{decision.port}"
            out_headers.insert(0, ("Host", f"{decision.host}{port}"))
        if body and _header(out_headers, "Content-Length") is None:
            out_headers.append(("Content-Length", str(len(body))))
        try:
            status, headers, resp_body = _origin_exchange(
                decision.host, decision.port, head.method, decision.origin_path, out_headers, body
            )
        except socket.timeout:
            self._fail_plain(client, head, decision, started_at, 504, "origin timed out")
            return _wants_keep_alive(head)
        except OSError as exc:
            self._fail_plain(client, head, decision, started_at, 502, f"origin unreachable: {exc}")
            return _wants_keep_alive(head)

        clean = strip_hop_headers(headers)
        now = started_at / 1000.0
        if (
            decision.cacheable_key is not None
            and head.method == "GET"
            and cacheable_response(status, clean)
        ):
            self.cache.insert(
                decision.cacheable_key,
                CacheEntry(
                    key=decision.cacheable_key,
                    status=status,
                    headers=clean,
                    body=resp_body,
                    origin_last_modified=_header(clean, "Last-Modified"),
                ),
                now,
            )
        return self._finish_plain(client, head, status, clean, resp_body, started_at=started_at)

    def _finish_plain(
        self,
        client: socket.socket,
        head: RequestHead,
        status: int,
        headers: list[tuple[str, str]],
        body: bytes,
        started_at: int,
    ) -> bool:
        self.runtime.record_plain(
            started_at_ms=started_at,
            head=head,
            status=status,
            response_headers=headers,
            body=body,
            served_from_cache=False,
            canonical=_canonical_text(head),
        )
        self._send_response(client, head, status, headers, body)
        return _wants_keep_alive(head)

    def _fail_plain(
        self,
        client: socket.socket,
        head: RequestHead,
        decision: ForwardToOrigin,
        started_at: int,
        status: int,
        message: str,
    ) -> None:
        self.runtime.record_plain(
            started_at_ms=started_at,
            head=head,
            status=status,
            response_headers=[("Content-Type", "text/plain")],
            body=b"",
            served_from_cache=False,
            canonical=_canonical_text(head),
        )
        self._send_error(client, status, message)

    def _send_response(
        self,
        client: socket.socket,
        head: RequestHead,
        status: int,
        headers: list[tuple[str, str]],
        body: bytes,
    ) -> None:
        has_body = head.method != "HEAD" and status not in (204, 304) and status >= 200
        reason = STATUS_REASONS.get(status, http.client.responses.get(status, "OK"))
        out = [f"HTTP/1.1 {status} {reason}"]
        for name, value in headers:
            if has_body and name.lower() == "content-length":
                continue  # re-framed below
            out.append(f"{name}: {value}")
        if has_body:
            out.append(f"Content-Length: {len(body)}")
        payload = ("\r\n".join(out) + "\r\n\r\n").encode("iso-8859-1")
        if has_body:
            payload += body
        client.sendall(payload)

    def _send_error(self, client: socket.socket, status: int, message: str) -> None:
        body = (message + "\n").encode("utf-8")
        reason = STATUS_REASONS.get(status, "Error")
        try:
            client.sendall(
                (
                    f"HTTP/1.1 {status} {reason}\r\n"
                    "Content-Type: text/plain; charset=utf-8\r\n"
                    f"Content-Length: {len(body)}\r\n"
                    f"Via: {VIA_TOKEN}\r\n\r\n"
                ).encode("iso-8859-1")
                + body
            )
        except OSError:
            pass

    # -- tunnels --

    def _run_tunnel(
        self, client: socket.socket, head: RequestHead, decision: OpenTunnel, started_at: int
    ) -> None:
        try:
            origin = socket.create_connection(
                (decision.host, decision.port), timeout=ORIGIN_TIMEOUT_S
            )
        except OSError as exc:
            self.runtime.record_tunnel(
                started_at_ms=started_at, host=decision.host, port=decision.port, ok=False
            )
            self._send_error(client, 502, f"tunnel failed: {exc}")
            return
        client.sendall(b"HTTP/1.1 200 Connection Established\r\n\r\n")
        self.runtime.record_tunnel(
            started_at_ms=started_at, host=decision.host, port=decision.port, ok=True
        )
        _pump(client, origin)

    def __enter__(self) -> "ProxyServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def _pump(a: socket.socket, b: socket.socket) -> None:
    """Relay bytes both ways until either side closes."""
    a.setblocking(True)
    b.setblocking(True)
    sockets = [a, b]
    try:
        while True:
            readable, _, errored = select.select(sockets, [], sockets, 60.0)
            if errored:
                return
            if not readable:
                return  # both sides idle for a minute: give up
            for sock in readable:
                try:
                    data = sock.recv(65536)
                except OSError:
                    return
                if not data:
                    return
                other = b if sock is a else a
                try:
                    other.sendall(data)
                except OSError:
                    return
    finally:
        for sock in sockets:
            try:
                sock.close()
            except OSError:
                pass


def _origin_exchange(
    host: str,
    port: int,
    method: str,
    path: str,
    headers: list[tuple[str, str]],
    body: bytes,
) -> tuple[int, list[tuple[str, str]], bytes]:
    """One request against the origin; returns status, headers, full body."""
    conn = http.client.HTTPConnection(host, port, timeout=ORIGIN_TIMEOUT_S)
    try:
        conn.putrequest(method, path, skip_host=True, skip_accept_encoding=True)
        for name, value in headers:
            conn.putheader(name, value)
        conn.endheaders(body if body else None)
        resp = conn.getresponse()
        resp_body = resp.read()
        return resp.status, list(resp.getheaders()), resp_body
    finally:
        conn.close()


def _wants_keep_alive(head: RequestHead) -> bool:
    connection = (head.header("Connection") or "").lower()
    if "close" in connection:
        return False
    if head.version == "HTTP/1.0":
        return "keep-alive" in connection
    return True


def _header(headers: list[tuple[str, str]], name: str) -> str | None:
    lname = name.lower()
    for key, value in headers:
        if key.lower() == lname:
            return value
    return None


def _canonical_text(head: RequestHead) -> str | None:
    try:
        target = head.target
        if target.startswith("/"):
            host = head.header("Host")
            if not host:
                return None
            target = f"http://{host}{target}"
        return normalize_url(target).text
    except UrlError:
        return None
