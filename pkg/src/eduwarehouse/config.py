"""Gateway configuration: documented defaults plus a key=value file format.

Byte sizes accept plain integers or KiB/MiB/GiB suffixes.  Unknown keys are
rejected so typos fail loudly instead of silently running on defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ValidationError
from .etl import SplitConfig

KIB = 1024
MIB = 1024 * KIB
GIB = 1024 * MIB

_SIZE_SUFFIXES = {"kib": KIB, "mib": MIB, "gib": GIB, "k": KIB, "m": MIB, "g": GIB}


def parse_bytes(text: str) -> int:
    """Parse "1048576", "1MiB", "64m" and the like into a byte count."""
    raw = text.strip().lower()
    for suffix, factor in _SIZE_SUFFIXES.items():
        if raw.endswith(suffix):
            number = raw[: -len(suffix)].strip()
            break
    else:
        number, factor = raw, 1
    try:
        value = int(number)
    except ValueError:
        raise ValidationError(f"not a byte size: {text!r}") from None
    if value <= 0:
        raise ValidationError(f"byte size must be positive: {text!r}")
    return value * factor


@dataclass
class GatewayConfig:
    """Operator configuration with desk-scale defaults."""

    warehouse_root: Path = Path("warehouse")
    s_min: int = 1
    s_max: int = 256 * MIB
    s_b: int = 1 * MIB
    worker_pool_size: int = field(default_factory=lambda: os.cpu_count() or 1)
    cube_refresh_interval: float = 60.0
    listen_host: str = "127.0.0.1"
    listen_port: int = 8765
    session_ttl: float = 3600.0
    upload_limit: int = 256 * MIB

    def __post_init__(self) -> None:
        self.warehouse_root = Path(self.warehouse_root)
        SplitConfig(self.s_min, self.s_max, self.s_b)  # validates the triple
        if self.worker_pool_size < 1:
            raise ValidationError("worker_pool_size must be >= 1")
        if self.cube_refresh_interval <= 0:
            raise ValidationError("cube_refresh_interval must be positive")
        if self.session_ttl <= 0:
            raise ValidationError("session_ttl must be positive")
        if self.upload_limit <= 0:
            raise ValidationError("upload_limit must be positive")
        if not 0 <= self.listen_port < 65536:  # 0 binds an ephemeral port
            raise ValidationError("listen_port out of range")

    @property
    def registry_path(self) -> Path:
        return self.warehouse_root / "registry.csv"

    def split_config(self) -> SplitConfig:
        return SplitConfig(self.s_min, self.s_max, self.s_b)


_BYTE_KEYS = {"s_min", "s_max", "s_b", "upload_limit"}
_INT_KEYS = {"worker_pool_size", "listen_port"}
_FLOAT_KEYS = {"cube_refresh_interval", "session_ttl"}


def load_config(path: Path | str | None) -> GatewayConfig:
    """Read a key=value config file; missing file or None means defaults."""
    if path is None:
        return GatewayConfig()
    values: dict = {}
    known = {f.name for f in fields(GatewayConfig)} | {"listen_address"}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        if key == "listen_address":
            host, _, port = value.rpartition(":")
            if not host or not port:
                raise ValidationError(f"{path}:{lineno}: listen_address must be host:port")
            values["listen_host"] = host
            values["listen_port"] = int(port)
        elif key == "warehouse_root":
            values[key] = Path(value)
        elif key in _BYTE_KEYS:
            values[key] = parse_bytes(value)
        elif key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        else:
            values[key] = value
    return GatewayConfig(**values)


def render_default_config(root: Path | str | None = None) -> str:
    """Template written by the init command."""
    cfg = GatewayConfig()
    return (
        "# eduwarehouse gateway configuration\n"
        f"warehouse_root={root if root is not None else cfg.warehouse_root}\n"
        f"s_min={cfg.s_min}\n"
        f"s_max={cfg.s_max // MIB}MiB\n"
        f"s_b={cfg.s_b // MIB}MiB\n"
        f"worker_pool_size={cfg.worker_pool_size}\n"
        f"cube_refresh_interval={cfg.cube_refresh_interval}\n"
        f"listen_address={cfg.listen_host}:{cfg.listen_port}\n"
        f"session_ttl={cfg.session_ttl}\n"
        f"upload_limit={cfg.upload_limit // MIB}MiB\n"
    )
