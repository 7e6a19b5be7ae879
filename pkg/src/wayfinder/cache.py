"""In-memory store of GET responses under a three-clock freshness policy.

An entry stays servable while it is younger than ``max_residence`` seconds
and has been used within the last ``max_idle`` seconds; entries past the
half-residence mark are revalidated against the origin's Last-Modified date.
Capacity pressure evicts the least recently accessed entries first.

All operations take an explicit ``now`` so policy behavior is testable with
scripted clocks. A single lock serializes mutations; lookups mutate the
access clock, so they take it too.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

DEFAULT_MAX_RESIDENCE = 3600.0
DEFAULT_MAX_IDLE = 600.0
DEFAULT_CAPACITY = 256 * 1024 * 1024

MISS_ABSENT = "absent"
MISS_EXPIRED_RESIDENCE = "expired_residence"
MISS_EXPIRED_IDLE = "expired_idle"
MISS_STALE_ORIGIN = "stale_origin"

# response headers that make a response uncacheable; Content-Encoding is
# included because the stored body would be wrong for clients that did not
# offer that encoding, and Vary handling is out of scope
_UNCACHEABLE_CC = ("no-store", "private")


@dataclass
class CacheEntry:
    key: str
    status: int
    headers: list[tuple[str, str]]
    body: bytes
    stored_at: float = 0.0
    origin_last_modified: str | None = None
    last_access: float = 0.0
    hit_count: int = 0
    seq: int = field(default=0, repr=False)  # insertion order, breaks last_access ties


@dataclass(frozen=True)
class Hit:
    entry: CacheEntry
    revalidate: bool = False


@dataclass(frozen=True)
class Miss:
    reason: str


def cache_key(method: str, canonical_url: str) -> str | None:
    """Cache key for a request; None marks the request non-cacheable."""
    if method != "GET":
        return None
    return f"GET {canonical_url}"


def cacheable_response(status: int, headers: list[tuple[str, str]]) -> bool:
    """Whether a response may be stored at all (policy clocks come later)."""
    if status != 200:
        return False
    for name, value in headers:
        lname = name.lower()
        if lname == "cache-control":
            lowered = value.lower()
            if any(token in lowered for token in _UNCACHEABLE_CC):
                return False
        elif lname in ("vary", "content-encoding"):
            return False
    return True


class ResponseCache:
    def __init__(
        self,
        max_residence: float = DEFAULT_MAX_RESIDENCE,
        max_idle: float = DEFAULT_MAX_IDLE,
        capacity_bytes: int = DEFAULT_CAPACITY,
    ) -> None:
        if not max_residence >= max_idle > 0:
            raise ValueError("require max_residence >= max_idle > 0")
        self.max_residence = max_residence
        self.max_idle = max_idle
        self.capacity_bytes = capacity_bytes
        self._entries: dict[str, CacheEntry] = {}
        self._bytes = 0
        self._seq = 0
        self._lock = threading.Lock()
        self.hits = 0
        self.misses: dict[str, int] = {
            MISS_ABSENT: 0,
            MISS_EXPIRED_RESIDENCE: 0,
            MISS_EXPIRED_IDLE: 0,
            MISS_STALE_ORIGIN: 0,
        }
        self.evictions = 0

    def lookup(self, key: str | None, now: float) -> Hit | Miss:
        """Serve decision for a key at time ``now``.

        A hit refreshes the access clock and bumps the hit counter; an
        expired entry is removed as a side effect of reporting the miss.
        Hits older than half the residence bound are flagged for
        revalidation when the origin supplied a Last-Modified date.
        """
        with self._lock:
            entry = self._entries.get(key) if key is not None else None
            if entry is None:
                self.misses[MISS_ABSENT] += 1
                return Miss(MISS_ABSENT)
            if now - entry.stored_at > self.max_residence:
                self._remove(entry.key)
                self.misses[MISS_EXPIRED_RESIDENCE] += 1
                return Miss(MISS_EXPIRED_RESIDENCE)
            if now - entry.last_access > self.max_idle:
                self._remove(entry.key)
                self.misses[MISS_EXPIRED_IDLE] += 1
                return Miss(MISS_EXPIRED_IDLE)
            entry.last_access = now
            entry.hit_count += 1
            self.hits += 1
            revalidate = (
                entry.origin_last_modified is not None
                and now - entry.stored_at > self.max_residence / 2
            )
            return Hit(entry, revalidate=revalidate)

    def insert(self, key: str, entry: CacheEntry, now: float) -> list[str]:
        """Store an entry, returning the keys evicted to make room.

        The entry's clocks are stamped here: stored_at = last_access = now.
        A body larger than the whole cache is silently not stored. An
        existing entry under the same key is replaced.
        """
        if len(entry.body) > self.capacity_bytes:
            return []
        with self._lock:
            if key in self._entries:
                self._remove(key)
            entry.key = key
            entry.stored_at = now
            entry.last_access = now
            entry.hit_count = 0
            self._seq += 1
            entry.seq = self._seq
            self._entries[key] = entry
            self._bytes += len(entry.body)
            evicted = []
            if self._bytes > self.capacity_bytes:
                for victim in sorted(
                    (e for e in self._entries.values() if e.key != key),
                    key=lambda e: (e.last_access, e.seq),
                ):
                    self._remove(victim.key)
                    self.evictions += 1
                    evicted.append(victim.key)
                    if self._bytes <= self.capacity_bytes:
                        break
            return evicted

    def sweep(self, now: float) -> list[str]:
        """Drop every entry violating a policy bound at time ``now``."""
        with self._lock:
            expired = [
                e.key
                for e in self._entries.values()
                if now - e.stored_at > self.max_residence
                or now - e.last_access > self.max_idle
            ]
            for key in expired:
                self._remove(key)
            return expired

    def refresh(self, key: str, now: float) -> CacheEntry | None:
        """Origin said 304: the copy is still current, restart its residence."""
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                entry.stored_at = now
                entry.last_access = now
            return entry

    def invalidate_stale(self, key: str) -> None:
        """Origin sent a newer document: drop the old copy."""
        with self._lock:
            if key in self._entries:
                self._remove(key)
                self.misses[MISS_STALE_ORIGIN] += 1

    def _remove(self, key: str) -> None:
        entry = self._entries.pop(key)
        self._bytes -= len(entry.body)

    def stats(self) -> dict:
        with self._lock:
            return {
                "entries": len(self._entries),
                "bytes": self._bytes,
                "capacity_bytes": self.capacity_bytes,
                "hits": self.hits,
                "misses": dict(self.misses),
                "evictions": self.evictions,
            }

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def total_bytes(self) -> int:
        return self._bytes
