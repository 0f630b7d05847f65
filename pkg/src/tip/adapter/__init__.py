"""Schema adapter pipeline: TOML descriptor -> formula AST -> wasm module,
cached by schema pair and executed in a bounded sandbox."""

from .base import (
    AdapterError,
    AdapterSpec,
    CompiledAdapter,
    DuplicateAdapter,
    InvalidModule,
    MalformedResult,
    MissingField,
    NoAdapter,
    SandboxConfig,
    SandboxTimeout,
    TargetOverflow,
    TomlSyntax,
    Trap,
    UnknownSchema,
)
from .emitter import compile_adapter, emit_module
from .formula import (
    Bin,
    Const,
    DepthExceeded,
    FormulaError,
    LexError,
    Neg,
    TrailingInput,
    UnexpectedToken,
    UnknownIdentifier,
    Var,
    parse_formula,
)
from .registry import AdapterRegistry, parse_adapter_toml, registry_get_or_compile, translate
from .sandbox import execute_buffer, execute_scalar
from .validator import validate_module

__all__ = [
    "AdapterError",
    "AdapterRegistry",
    "AdapterSpec",
    "Bin",
    "CompiledAdapter",
    "Const",
    "DepthExceeded",
    "DuplicateAdapter",
    "FormulaError",
    "InvalidModule",
    "LexError",
    "MalformedResult",
    "MissingField",
    "Neg",
    "NoAdapter",
    "SandboxConfig",
    "SandboxTimeout",
    "TargetOverflow",
    "TomlSyntax",
    "TrailingInput",
    "Trap",
    "UnexpectedToken",
    "UnknownIdentifier",
    "UnknownSchema",
    "Var",
    "compile_adapter",
    "emit_module",
    "execute_buffer",
    "execute_scalar",
    "parse_adapter_toml",
    "parse_formula",
    "registry_get_or_compile",
    "translate",
    "validate_module",
]
