"""Decide which HTTP transactions are page navigations and normalize their URLs.

Revisits must land on the same map node, so URL canonicalization has to be
deterministic and idempotent: normalizing an already-canonical URL is a no-op.
Title extraction works on a bounded prefix of the body so the proxy never has
to buffer more than it already does to serve the response.
"""

from __future__ import annotations

import codecs
import re
from dataclasses import dataclass
from html.parser import HTMLParser
from urllib.parse import urlsplit

TITLE_WINDOW = 64 * 1024
TITLE_MAX_CHARS = 256

PAGE_MEDIA_TYPES = {"text/html", "application/xhtml+xml"}
PAGE_STATUSES = {200, 203, 206}
PAGE_METHODS = {"GET", "POST"}

_DEFAULT_PORTS = {"http": 80, "https": 443, "ws": 80, "wss": 443, "ftp": 21}
_UNRESERVED = frozenset(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~"
)
# pchar plus "/": unreserved / sub-delims / ":" / "@"
_PATH_SAFE = _UNRESERVED | frozenset("!$&'()*+,;=:@/")
_HEXDIGITS = frozenset("0123456789abcdefABCDEF")


class UrlError(ValueError):
    """Raised when a raw URL cannot be parsed as an absolute URL."""


@dataclass(frozen=True, slots=True)
class CanonicalUrl:
    """Normalized absolute URL; node identity in the navigation map."""

    scheme: str
    host: str
    port: int | None
    path: str
    query: str | None

    @property
    def text(self) -> str:
        host = f"[{self.host}]" if ":" in self.host else self.host
        netloc = host if self.port is None else f"{host}:{self.port}"
        url = f"{self.scheme}://{netloc}{self.path}"
        if self.query is not None:
            url += f"?{self.query}"
        return url

    def __str__(self) -> str:
        return self.text


def normalize_url(raw: str) -> CanonicalUrl:
    """Canonicalize an absolute URL: casing, default port, dot segments, escapes.

    Fragments and userinfo are dropped; the query string is kept verbatim.
    Raises UrlError when the input has no scheme or host.
    """
    try:
        parts = urlsplit(raw)
    except ValueError as exc:
        raise UrlError(f"unparseable URL: {raw!r}") from exc
    if not parts.scheme or parts.hostname is None or parts.hostname == "":
        raise UrlError(f"not an absolute URL: {raw!r}")

    scheme = parts.scheme.lower()
    host = parts.hostname  # already lowercased by urlsplit
    if not host.isascii():
        try:
            host = host.encode("idna").decode("ascii")
        except UnicodeError:
            pass  # keep the lowercased unicode host rather than failing the visit
    try:
        port = parts.port
    except ValueError as exc:
        raise UrlError(f"invalid port in URL: {raw!r}") from exc
    if port is not None and port == _DEFAULT_PORTS.get(scheme):
        port = None

    path = _remove_dot_segments(_normalize_percent(parts.path)) or "/"
    query = parts.query if parts.query else None
    return CanonicalUrl(scheme=scheme, host=host, port=port, path=path, query=query)


def _normalize_percent(path: str) -> str:
    """Decode unreserved percent-escapes, uppercase the rest, escape raw bytes."""
    out: list[str] = []
    i = 0
    n = len(path)
    while i < n:
        ch = path[i]
        if ch == "%":
            if i + 2 < n and path[i + 1] in _HEXDIGITS and path[i + 2] in _HEXDIGITS:
                decoded = chr(int(path[i + 1 : i + 3], 16))
                if decoded in _UNRESERVED:
                    out.append(decoded)
                else:
                    out.append("%" + path[i + 1 : i + 3].upper())
                i += 3
            else:
                out.append("%25")  # stray percent sign
                i += 1
        elif ch in _PATH_SAFE:
            out.append(ch)
            i += 1
        else:
            out.extend(f"%{b:02X}" for b in ch.encode("utf-8"))
            i += 1
    return "".join(out)


def _remove_dot_segments(path: str) -> str:
    # RFC 3986 section 5.2.4
    output: list[str] = []
    buf = path
    while buf:
        if buf.startswith("../"):
            buf = buf[3:]
        elif buf.startswith("./"):
            buf = buf[2:]
        elif buf.startswith("/./"):
            buf = "/" + buf[3:]
        elif buf == "/.":
            buf = "/"
        elif buf.startswith("/../"):
            buf = "/" + buf[4:]
            if output:
                output.pop()
        elif buf == "/..":
            buf = "/"
            if output:
                output.pop()
        elif buf in (".", ".."):
            buf = ""
        else:
            start = 1 if buf.startswith("/") else 0
            cut = buf.find("/", start)
            if cut == -1:
                output.append(buf)
                buf = ""
            else:
                output.append(buf[:cut])
                buf = buf[cut:]
    return "".join(output)


def media_type(content_type: str | None) -> str | None:
    """Media type of a Content-Type value, lowercased, parameters stripped."""
    if content_type is None:
        return None
    return content_type.split(";", 1)[0].strip().lower() or None


def accept_allows_html(accept: str) -> bool:
    for part in accept.split(","):
        media = part.split(";", 1)[0].strip().lower()
        if media in ("text/html", "*/*"):
            return True
    return False


def is_page_navigation(txn) -> bool:
    """True when a transaction represents the user landing on a page.

    Header-level rule: GET/POST, success status, HTML media type, and an
    Accept header (when present) that admits text/html. Subresources
    (images, scripts, stylesheets) and redirect hops never qualify.
    """
    if txn.kind != "plain":
        return False
    if txn.method not in PAGE_METHODS:
        return False
    if txn.status not in PAGE_STATUSES:
        return False
    if media_type(txn.content_type) not in PAGE_MEDIA_TYPES:
        return False
    accept = getattr(txn, "accept", None)
    if accept is not None and not accept_allows_html(accept):
        return False
    return True


_CHARSET_PARAM_RE = re.compile(r"charset\s*=\s*\"?([A-Za-z0-9_.:+-]+)\"?", re.IGNORECASE)
_META_CHARSET_RE = re.compile(
    rb"<meta[^>]{0,256}?charset\s*=\s*[\"']?\s*([A-Za-z0-9_.:+-]+)", re.IGNORECASE
)


def _resolve_charset(content_type: str | None, window: bytes) -> str:
    if content_type:
        m = _CHARSET_PARAM_RE.search(content_type)
        if m:
            return m.group(1)
    m = _META_CHARSET_RE.search(window)
    if m:
        return m.group(1).decode("ascii", errors="replace")
    return "utf-8"


class _TitleParser(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.chunks: list[str] = []
        self.found = False
        self._in_title = False
        self._done = False

    def handle_starttag(self, tag: str, attrs) -> None:
        if tag == "title" and not self._done:
            self._in_title = True
            self.found = True

    def handle_endtag(self, tag: str) -> None:
        if tag == "title" and self._in_title:
            self._in_title = False
            self._done = True

    def handle_data(self, data: str) -> None:
        if self._in_title:
            self.chunks.append(data)


def extract_title(body_prefix: bytes, content_type: str | None = None) -> str | None:
    """Text of the first <title> element in the decoded body prefix.

    Inspects at most TITLE_WINDOW bytes. Entities are decoded, whitespace is
    collapsed and the result is truncated to TITLE_MAX_CHARS characters.
    Returns None when no title element appears in the window.
    """
    window = body_prefix[:TITLE_WINDOW]
    charset = _resolve_charset(content_type, window)
    try:
        codecs.lookup(charset)
    except LookupError:
        charset = "utf-8"
    text = window.decode(charset, errors="replace")

    parser = _TitleParser()
    try:
        parser.feed(text)
        parser.close()
    except Exception:
        pass  # malformed markup: keep whatever was collected
    if not parser.found:
        return None
    title = " ".join("".join(parser.chunks).split())
    return title[:TITLE_MAX_CHARS]
