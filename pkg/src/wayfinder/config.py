"""Runtime configuration shared by the proxy, cache, and control API."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

DEFAULT_LISTEN_PORT = 8899
DEFAULT_CONTROL_PORT = 8900


class ConfigError(ValueError):
    pass


@dataclass
class ProxyConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = DEFAULT_LISTEN_PORT
    control_host: str = "127.0.0.1"
    control_port: int = DEFAULT_CONTROL_PORT
    idle_threshold_s: float = 300.0
    cache_max_residence_s: float = 3600.0
    cache_max_idle_s: float = 600.0
    cache_capacity_bytes: int = 256 * 1024 * 1024
    data_dir: Path | None = None  # None disables persistence (tests)
    timezone: str | None = None
    control_allow_remote: bool = False
    ui_dir: Path | None = None

    def validate(self) -> None:
        if self.idle_threshold_s <= 0:
            raise ConfigError("idle threshold must be positive")
        if not (self.cache_max_residence_s >= self.cache_max_idle_s > 0):
            raise ConfigError("need cache max residence >= cache max idle > 0")
        if self.cache_capacity_bytes <= 0:
            raise ConfigError("cache capacity must be positive")
        if (
            self.listen_host == self.control_host
            and self.listen_port == self.control_port
            and self.listen_port != 0
        ):
            raise ConfigError("proxy and control API cannot share an address")
