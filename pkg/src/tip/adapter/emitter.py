"""WebAssembly module emission for scalar conversion formulas.

The formula AST is lowered by a postorder walk onto the wasm value stack:
the variable becomes local.get 0, constants become fN.const, operators map
1:1 to fN.add/sub/mul/div/neg. The module exports a single function
"transform" with signature (fN) -> fN.
"""

from __future__ import annotations

import struct

import numpy as np

from .base import AdapterSpec, CompiledAdapter
from .formula import Bin, Const, DepthExceeded, FormulaAst, Neg, Var, ast_depth, parse_formula

WASM_MAGIC = b"\x00\x61\x73\x6d"
WASM_VERSION = b"\x01\x00\x00\x00"

VALTYPE = {"i32": 0x7F, "i64": 0x7E, "f32": 0x7D, "f64": 0x7C}

OP_LOCAL_GET = 0x20
OP_END = 0x0B
CONST_OP = {"f32": 0x43, "f64": 0x44}
BIN_OP = {
    ("f32", "+"): 0x92,
    ("f32", "-"): 0x93,
    ("f32", "*"): 0x94,
    ("f32", "/"): 0x95,
    ("f64", "+"): 0xA0,
    ("f64", "-"): 0xA1,
    ("f64", "*"): 0xA2,
    ("f64", "/"): 0xA3,
}
NEG_OP = {"f32": 0x8C, "f64": 0x99}
BIN_NAME = {"+": "add", "-": "sub", "*": "mul", "/": "div"}

MAX_AST_DEPTH = 64


def leb128_u(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def leb128_s(value: int) -> bytes:
    out = bytearray()
    more = True
    while more:
        byte = value & 0x7F
        value >>= 7
        if (value == 0 and not byte & 0x40) or (value == -1 and byte & 0x40):
            more = False
        else:
            byte |= 0x80
        out.append(byte)
    return bytes(out)


def _const_bytes(value: float, width: str) -> bytes:
    if width == "f32":
        return struct.pack("<f", np.float32(value))
    return struct.pack("<d", value)


def format_const(value: float, width: str) -> str:
    """Shortest decimal that round-trips at the given width."""
    if width == "f32":
        text = np.format_float_positional(np.float32(value), unique=True)
    else:
        text = repr(float(value))
    if text.endswith("."):
        text += "0"
    if "." not in text and "e" not in text and "inf" not in text and "nan" not in text:
        text += ".0"
    return text


def lower_ast(ast: FormulaAst, width: str) -> list[tuple]:
    """Postorder instruction list: ('local.get', 0) | ('const', v) | ('bin', op) | ('neg',)."""
    instructions: list[tuple] = []

    def walk(node: FormulaAst) -> None:
        if isinstance(node, Var):
            instructions.append(("local.get", 0))
        elif isinstance(node, Const):
            instructions.append(("const", node.value))
        elif isinstance(node, Bin):
            walk(node.left)
            walk(node.right)
            instructions.append(("bin", node.op))
        elif isinstance(node, Neg):
            walk(node.child)
            instructions.append(("neg",))
        else:
            raise TypeError(f"unknown AST node {node!r}")

    walk(ast)
    return instructions


def _section(section_id: int, content: bytes) -> bytes:
    return bytes([section_id]) + leb128_u(len(content)) + content


def emit_module(ast: FormulaAst, width: str = "f32") -> tuple[bytes, str]:
    """Emit (wasm_bytes, wat_text) for a transform module at f32 or f64."""
    if width not in ("f32", "f64"):
        raise ValueError(f"width must be f32 or f64, not {width!r}")
    if ast_depth(ast) > MAX_AST_DEPTH:
        raise DepthExceeded(f"AST deeper than {MAX_AST_DEPTH}")

    lowered = lower_ast(ast, width)

    body = bytearray()
    wat_lines = []
    for instr in lowered:
        if instr[0] == "local.get":
            body.append(OP_LOCAL_GET)
            body += leb128_u(instr[1])
            wat_lines.append(f"local.get {instr[1]}")
        elif instr[0] == "const":
            body.append(CONST_OP[width])
            body += _const_bytes(instr[1], width)
            wat_lines.append(f"{width}.const {format_const(instr[1], width)}")
        elif instr[0] == "bin":
            body.append(BIN_OP[(width, instr[1])])
            wat_lines.append(f"{width}.{BIN_NAME[instr[1]]}")
        else:
            body.append(NEG_OP[width])
            wat_lines.append(f"{width}.neg")
    body.append(OP_END)

    valtype = VALTYPE[width]
    type_section = leb128_u(1) + bytes([0x60]) + leb128_u(1) + bytes([valtype]) + leb128_u(1) + bytes([valtype])
    func_section = leb128_u(1) + leb128_u(0)
    export_name = b"transform"
    export_section = leb128_u(1) + leb128_u(len(export_name)) + export_name + bytes([0x00]) + leb128_u(0)
    code = leb128_u(0) + bytes(body)  # zero locals, then the expression
    code_section = leb128_u(1) + leb128_u(len(code)) + code

    module = (
        WASM_MAGIC
        + WASM_VERSION
        + _section(1, type_section)
        + _section(3, func_section)
        + _section(7, export_section)
        + _section(10, code_section)
    )

    indent = "    "
    wat = (
        "(module\n"
        f'  (func (export "transform") (param {width}) (result {width})\n'
        + "\n".join(indent + line for line in wat_lines)
        + ")\n)\n"
    )
    return module, wat


def compile_adapter(spec: AdapterSpec) -> CompiledAdapter:
    """Parse the descriptor's formula and emit at its numeric width."""
    ast = parse_formula(spec.formula)
    wasm_bytes, wat = emit_module(ast, spec.numeric_width)
    return CompiledAdapter(spec, wasm_bytes, wat, spec.cache_key)
