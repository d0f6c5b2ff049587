"""Instance configuration: JSON file plus environment-variable overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import ConfigError

ROLE_DISTRICT = "district"
ROLE_TOP = "top_level"

ENV_OVERRIDES = {
    "EREG_ROLE": "role",
    "EREG_PARENT": "parent",
    "EREG_DATA_DIR": "data_dir",
    "EREG_SYNC_MODE": "sync_mode",
}


@dataclass
class InstanceConfig:
    role: str
    data_dir: str
    listen: str = "127.0.0.1:0"
    parent: str | None = None
    sync_mode: str = "eager"  # eager | batch | on_query
    batch_interval_s: float = 30.0
    id_start: int = 1
    auto_create_on_ambiguous: bool = False
    metamodel_path: str | None = None
    permissions_path: str | None = None
    gazetteer_path: str | None = None
    masters: list[str] = field(default_factory=lambda: ["root"])
    max_privacy_level: int = 3
    reader_threshold: int = 1
    graph_depth_max: int = 3
    graph_node_cap: int = 500
    default_chunking: dict = field(default_factory=lambda: {"kind": "paragraph"})

    def validate(self) -> "InstanceConfig":
        if self.role not in (ROLE_DISTRICT, ROLE_TOP):
            raise ConfigError(f"unknown role {self.role!r}")
        if self.role == ROLE_DISTRICT and not self.parent:
            raise ConfigError("district instances require a parent address")
        if self.role == ROLE_TOP and self.parent:
            raise ConfigError("the top-level instance cannot have a parent")
        if self.sync_mode not in ("eager", "batch", "on_query"):
            raise ConfigError(f"unknown sync mode {self.sync_mode!r}")
        if not self.data_dir:
            raise ConfigError("data_dir is required")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "InstanceConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "role" not in data or "data_dir" not in data:
            raise ConfigError("config needs at least role and data_dir")
        return cls(**data).validate()

    @classmethod
    def load(cls, path: str | Path, env: dict | None = None) -> "InstanceConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except ValueError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        environment = os.environ if env is None else env
        for var, key in ENV_OVERRIDES.items():
            if environment.get(var):
                data[key] = environment[var]
        return cls.from_json(data)

    def dump(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
