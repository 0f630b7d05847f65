"""Independent WebAssembly module validator.

Parses the binary format from scratch (sharing no code with the emitter)
and checks structure plus stack-type discipline of every function body.
Scope is the straight-line numeric subset the adapter pipeline emits; any
construct outside it is rejected, which makes this a strict gate on emitter
output rather than a general-purpose validator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .base import InvalidModule

_VALTYPES = {0x7F: "i32", 0x7E: "i64", 0x7D: "f32", 0x7C: "f64"}

# opcode -> (mnemonic, immediate kind, pops, pushes); types resolved per opcode
_FLAT_OPS = {
    0x20: ("local.get", "localidx"),
    0x43: ("f32.const", "f32"),
    0x44: ("f64.const", "f64"),
    0x8C: ("f32.neg", None),
    0x92: ("f32.add", None),
    0x93: ("f32.sub", None),
    0x94: ("f32.mul", None),
    0x95: ("f32.div", None),
    0x99: ("f64.neg", None),
    0xA0: ("f64.add", None),
    0xA1: ("f64.sub", None),
    0xA2: ("f64.mul", None),
    0xA3: ("f64.div", None),
}


@dataclass
class ParsedFunction:
    type_index: int
    locals: list[str] = field(default_factory=list)
    instructions: list[tuple] = field(default_factory=list)  # (mnemonic, operand|None)


@dataclass
class ParsedModule:
    types: list[tuple[tuple[str, ...], tuple[str, ...]]] = field(default_factory=list)
    functions: list[ParsedFunction] = field(default_factory=list)
    exports: dict[str, tuple[str, int]] = field(default_factory=dict)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise InvalidModule("unexpected end of module")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def byte(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        result = 0
        shift = 0
        while True:
            byte = self.byte()
            result |= (byte & 0x7F) << shift
            if not byte & 0x80:
                break
            shift += 7
            if shift > 35:
                raise InvalidModule("LEB128 u32 too long")
        if result >= 1 << 32:
            raise InvalidModule("u32 out of range")
        return result

    def done(self) -> bool:
        return self.pos >= len(self.data)


def parse_module(data: bytes) -> ParsedModule:
    reader = _Reader(data)
    if reader.take(4) != b"\x00\x61\x73\x6d":
        raise InvalidModule("bad wasm magic")
    if reader.take(4) != b"\x01\x00\x00\x00":
        raise InvalidModule("unsupported wasm version")

    module = ParsedModule()
    func_type_indices: list[int] = []
    code_bodies: list[bytes] = []
    last_section = 0
    while not reader.done():
        section_id = reader.byte()
        size = reader.u32()
        body = _Reader(reader.take(size))
        if section_id == 0:
            raise InvalidModule("custom sections not in the emitted subset")
        if section_id <= last_section:
            raise InvalidModule(f"section {section_id} out of order")
        last_section = section_id
        if section_id == 1:
            for _ in range(body.u32()):
                if body.byte() != 0x60:
                    raise InvalidModule("bad functype form")
                params = tuple(_valtype(body.byte()) for _ in range(body.u32()))
                results = tuple(_valtype(body.byte()) for _ in range(body.u32()))
                module.types.append((params, results))
        elif section_id == 3:
            func_type_indices = [body.u32() for _ in range(body.u32())]
        elif section_id == 7:
            for _ in range(body.u32()):
                name = body.take(body.u32()).decode("utf-8")
                kind = body.byte()
                index = body.u32()
                if name in module.exports:
                    raise InvalidModule(f"duplicate export {name!r}")
                if kind != 0x00:
                    raise InvalidModule("only function exports are in the emitted subset")
                module.exports[name] = ("func", index)
        elif section_id == 10:
            code_bodies = [body.take(body.u32()) for _ in range(body.u32())]
        else:
            raise InvalidModule(f"section id {section_id} not in the emitted subset")
        if not body.done():
            raise InvalidModule(f"section {section_id} has trailing bytes")

    if len(code_bodies) != len(func_type_indices):
        raise InvalidModule("function/code section count mismatch")
    for type_index, code in zip(func_type_indices, code_bodies):
        if type_index >= len(module.types):
            raise InvalidModule(f"type index {type_index} out of range")
        module.functions.append(_parse_code(code, type_index))
    for name, (kind, index) in module.exports.items():
        if kind == "func" and index >= len(module.functions):
            raise InvalidModule(f"export {name!r} references function {index}")
    return module


def _valtype(code: int) -> str:
    try:
        return _VALTYPES[code]
    except KeyError:
        raise InvalidModule(f"unknown value type 0x{code:02x}") from None


def _parse_code(code: bytes, type_index: int) -> ParsedFunction:
    reader = _Reader(code)
    fn = ParsedFunction(type_index)
    for _ in range(reader.u32()):
        count = reader.u32()
        valtype = _valtype(reader.byte())
        fn.locals.extend([valtype] * count)
    while True:
        if reader.done():
            raise InvalidModule("code body missing end opcode")
        opcode = reader.byte()
        if opcode == 0x0B:
            if not reader.done():
                raise InvalidModule("instructions after end")
            return fn
        if opcode not in _FLAT_OPS:
            raise InvalidModule(f"opcode 0x{opcode:02x} not in the emitted subset")
        mnemonic, imm = _FLAT_OPS[opcode]
        operand = None
        if imm == "localidx":
            operand = reader.u32()
        elif imm == "f32":
            operand = struct.unpack("<f", reader.take(4))[0]
        elif imm == "f64":
            operand = struct.unpack("<d", reader.take(8))[0]
        fn.instructions.append((mnemonic, operand))


def _typecheck(fn: ParsedFunction, module: ParsedModule) -> None:
    params, results = module.types[fn.type_index]
    all_locals = list(params) + fn.locals
    stack: list[str] = []
    for mnemonic, operand in fn.instructions:
        if mnemonic == "local.get":
            if operand >= len(all_locals):
                raise InvalidModule(f"local.get {operand} out of range")
            stack.append(all_locals[operand])
            continue
        width = mnemonic.split(".", 1)[0]
        op = mnemonic.split(".", 1)[1]
        if op == "const":
            stack.append(width)
        elif op == "neg":
            if not stack or stack[-1] != width:
                raise InvalidModule(f"{mnemonic}: stack type mismatch")
        else:  # binary
            if len(stack) < 2 or stack[-1] != width or stack[-2] != width:
                raise InvalidModule(f"{mnemonic}: stack type mismatch")
            stack.pop()
    if tuple(stack) != results:
        raise InvalidModule(f"body leaves {stack}, function returns {list(results)}")


def validate_module(data: bytes) -> ParsedModule:
    """Raise InvalidModule unless the module is well-formed and type-correct.

    Returns the parse so callers (tests, tooling) can inspect the
    instruction sequence through a decode path independent of the emitter.
    """
    module = parse_module(data)
    if "transform" not in module.exports:
        raise InvalidModule('missing "transform" export')
    for fn in module.functions:
        _typecheck(fn, module)
    for name, (kind, index) in module.exports.items():
        if kind == "func" and name == "transform":
            params, results = module.types[module.functions[index].type_index]
            if len(params) != 1 or len(results) != 1 or params[0] != results[0]:
                raise InvalidModule("transform must be (fN) -> fN")
            if params[0] not in ("f32", "f64"):
                raise InvalidModule("transform must operate on f32 or f64")
    return module
