"""Adapter registry: TOML descriptor parsing, compile cache, translation."""

from __future__ import annotations

import logging

from .. import toml_mini
from ..model import DataSchema
from .base import (
    AdapterSpec,
    CompiledAdapter,
    DuplicateAdapter,
    MissingField,
    NoAdapter,
    SandboxConfig,
    TomlSyntax,
    UnknownSchema,
)
from .emitter import compile_adapter
from .sandbox import execute_scalar

log = logging.getLogger(__name__)

_SCHEMA_NAMES = {"u16", "u32", "i32", "f32", "f64", "cbor_map"}


def parse_adapter_toml(text: str) -> AdapterSpec:
    """Parse an [adapter] descriptor with keys id, source_schema,
    target_schema, formula."""
    try:
        doc = toml_mini.parse(text)
    except toml_mini.TomlError as exc:
        raise TomlSyntax(str(exc)) from exc
    table = doc.get("adapter")
    if not isinstance(table, dict):
        raise MissingField("missing [adapter] table")
    fields = {}
    for key in ("id", "source_schema", "target_schema", "formula"):
        if key not in table:
            raise MissingField(f"missing key {key!r}")
        fields[key] = table[key]
    for key in ("source_schema", "target_schema"):
        name = fields[key]
        if not isinstance(name, str) or name.lower() not in _SCHEMA_NAMES:
            raise UnknownSchema(f"{key} = {name!r}")
    return AdapterSpec(
        id=str(fields["id"]),
        source_schema=DataSchema.from_name(fields["source_schema"]),
        target_schema=DataSchema.from_name(fields["target_schema"]),
        formula=str(fields["formula"]),
    )


class AdapterRegistry:
    """Compiled adapters keyed by cache key, dispatched by schema pair.

    At most one adapter per (source, target) pair may be registered; the
    compile counter and the sandbox-invocation counter exist so tests can
    assert cache idempotence and the identity short-circuit.
    """

    def __init__(self, sandbox_config: SandboxConfig = SandboxConfig()):
        self._by_key: dict[int, CompiledAdapter] = {}
        self._by_pair: dict[tuple[DataSchema, DataSchema], CompiledAdapter] = {}
        self.sandbox_config = sandbox_config
        self.compile_count = 0
        self.sandbox_invocations = 0

    def get_or_compile(self, spec: AdapterSpec) -> CompiledAdapter:
        cached = self._by_key.get(spec.cache_key)
        if cached is not None:
            return cached
        compiled = compile_adapter(spec)
        self.compile_count += 1
        self._by_key[spec.cache_key] = compiled
        return compiled

    def register(self, spec: AdapterSpec) -> CompiledAdapter:
        pair = (spec.source_schema, spec.target_schema)
        existing = self._by_pair.get(pair)
        if existing is not None:
            if existing.cache_key == spec.cache_key:
                return existing
            raise DuplicateAdapter(
                f"{pair[0].name}->{pair[1].name} already provided by {existing.spec.id!r}"
            )
        compiled = self.get_or_compile(spec)
        self._by_pair[pair] = compiled
        log.debug("registered adapter %s: %s -> %s", spec.id, pair[0].name, pair[1].name)
        return compiled

    def register_toml(self, text: str) -> CompiledAdapter:
        return self.register(parse_adapter_toml(text))

    def lookup(self, source: DataSchema, target: DataSchema) -> CompiledAdapter | None:
        return self._by_pair.get((source, target))

    def can_translate(self, source: DataSchema, target: DataSchema) -> bool:
        return source == target or (source, target) in self._by_pair

    def translate(self, value, source: DataSchema, target: DataSchema):
        """Convert value between schemas; identity never touches the sandbox."""
        if source == target:
            return value
        adapter = self._by_pair.get((source, target))
        if adapter is None:
            raise NoAdapter(f"no adapter for {source.name} -> {target.name}")
        self.sandbox_invocations += 1
        return execute_scalar(adapter, value, self.sandbox_config)


def registry_get_or_compile(registry: AdapterRegistry, spec: AdapterSpec) -> CompiledAdapter:
    return registry.get_or_compile(spec)


def translate(registry: AdapterRegistry, value, source: DataSchema, target: DataSchema):
    return registry.translate(value, source, target)
