"""Node configuration files (TOML): identity, transport, tuning knobs,
served capabilities, adapter descriptor directory, bootstrap peers."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from . import toml_mini
from .crypto import NodeIdentity
from .model import Capability, DataSchema
from .node import NodeConfig


class ConfigError(Exception):
    pass


@dataclass
class CapabilitySetup:
    capability: Capability
    kind: str = "constant"  # constant | fill | telemetry
    value: object = 1


@dataclass
class NodeSetup:
    identity: NodeIdentity
    node_config: NodeConfig
    transport: str = "sim"
    bind: str = "127.0.0.1:0"
    name: str = "node"
    bootstrap: list[str] = field(default_factory=list)
    capabilities: list[CapabilitySetup] = field(default_factory=list)
    adapter_dir: str | None = None
    reputation_file: str | None = None


_MS_KNOBS = {
    "skew_window_ms": "skew_window_us",
    "cache_ttl_ms": "cache_ttl_us",
    "announce_interval_ms": "announce_interval_us",
    "rpc_timeout_ms": "rpc_timeout_us",
    "proposal_timeout_ms": "proposal_timeout_us",
    "contract_ttl_ms": "contract_ttl_us",
    "data_timeout_ms": "data_timeout_us",
    "discover_timeout_ms": "discover_timeout_us",
}


def load_node_config(path: str) -> NodeSetup:
    try:
        doc = toml_mini.load(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except toml_mini.TomlError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    table = doc.get("node", {})
    if not isinstance(table, dict):
        raise ConfigError("[node] must be a table")

    key_file = table.get("key_file")
    if not key_file:
        raise ConfigError("node.key_file is required")
    key_path = os.path.join(os.path.dirname(os.path.abspath(path)), key_file) \
        if not os.path.isabs(key_file) else key_file
    try:
        identity = NodeIdentity.load_key_file(key_path)
    except FileNotFoundError as exc:
        raise ConfigError(f"key file not found: {key_path}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad key file {key_path}: {exc}") from exc

    node_config = NodeConfig()
    for knob in ("k", "alpha"):
        if knob in table:
            setattr(node_config, knob, int(table[knob]))
    for ms_key, us_attr in _MS_KNOBS.items():
        if ms_key in table:
            setattr(node_config, us_attr, int(table[ms_key]) * 1000)
    if "lambda_per_s" in table:
        node_config.lambda_per_s = float(table["lambda_per_s"])
    if "availability" in table:
        node_config.availability = float(table["availability"])
    if "early_cancel" in table:
        node_config.early_cancel = bool(table["early_cancel"])

    capabilities = []
    for entry in doc.get("capability", []):
        try:
            capability = Capability(
                id=entry["id"],
                schema=DataSchema.from_name(entry.get("schema", "f32")),
                version=entry.get("version", "1.0.0"),
                precision=float(entry.get("precision", 1.0)),
                rate_hz=float(entry.get("rate_hz", 1.0)),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad [[capability]] entry: {exc}") from exc
        capabilities.append(
            CapabilitySetup(capability, entry.get("kind", "constant"), entry.get("value", 1))
        )

    return NodeSetup(
        identity=identity,
        node_config=node_config,
        transport=table.get("transport", "sim"),
        bind=table.get("bind", "127.0.0.1:0"),
        name=table.get("name", "node"),
        bootstrap=list(table.get("bootstrap", [])),
        capabilities=capabilities,
        adapter_dir=table.get("adapter_dir"),
        reputation_file=table.get("reputation_file"),
    )
