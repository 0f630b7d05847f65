"""Shared adapter types and the error taxonomy for the conversion pipeline."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from ..model import DataSchema


class AdapterError(Exception):
    pass


class TomlSyntax(AdapterError):
    pass


class MissingField(AdapterError):
    pass


class UnknownSchema(AdapterError):
    pass


class Trap(AdapterError):
    """Guest fault: out-of-bounds access, fuel exhaustion, bad stack."""


class SandboxTimeout(AdapterError):
    pass


class TargetOverflow(AdapterError):
    """Result does not fit the target integer schema (includes NaN/inf)."""


class MalformedResult(AdapterError):
    """Guest returned an offset/length outside its linear memory."""


class NoAdapter(AdapterError):
    pass


class DuplicateAdapter(AdapterError):
    pass


class InvalidModule(AdapterError):
    """Independent validator rejected the module."""


@dataclass(frozen=True)
class AdapterSpec:
    id: str
    source_schema: DataSchema
    target_schema: DataSchema
    formula: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("adapter id must be non-empty")

    @property
    def numeric_width(self) -> str:
        """f32 unless either end is F64."""
        if DataSchema.F64 in (self.source_schema, self.target_schema):
            return "f64"
        return "f32"

    @property
    def cache_key(self) -> int:
        material = f"{int(self.source_schema)}|{int(self.target_schema)}|{self.formula}"
        return int.from_bytes(hashlib.sha256(material.encode()).digest()[:8], "big")


@dataclass(frozen=True)
class CompiledAdapter:
    spec: AdapterSpec
    wasm_bytes: bytes
    text_form: str
    cache_key: int


@dataclass(frozen=True)
class SandboxConfig:
    linear_memory_pages: int = 1  # 64 KiB pages
    fuel_limit: int = 1_000_000
    timeout_s: float = 0.050
