"""Bounded execution of adapter modules.

Purpose-built interpreter for the instruction subset the pipeline emits
(plus linear memory, simple control flow and integer ops so buffer-ABI and
deliberately hostile modules can run in tests). Guests get a fresh instance
per call, a private linear memory with hard bounds checks, an instruction
budget and a wall-clock deadline; every fault surfaces as Trap/Timeout and
never touches host state.

Float semantics are IEEE 754 via numpy scalars so that f32 arithmetic is
rounded per operation exactly as WebAssembly requires.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from ..model import DataSchema, INTEGER_SCHEMAS, SCHEMA_RANGES
from .base import (
    CompiledAdapter,
    MalformedResult,
    SandboxConfig,
    SandboxTimeout,
    TargetOverflow,
    Trap,
)

PAGE_SIZE = 65536
BUFFER_BASE_OFFSET = 1024

_VALTYPES = {0x7F: "i32", 0x7E: "i64", 0x7D: "f32", 0x7C: "f64"}
_ZERO = {"i32": 0, "i64": 0, "f32": np.float32(0.0), "f64": np.float64(0.0)}

# opcode constants used by the dispatch loop
(UNREACHABLE, NOP, BLOCK, LOOP, END, BR, BR_IF, RETURN) = (
    0x00, 0x01, 0x02, 0x03, 0x0B, 0x0C, 0x0D, 0x0F,
)
DROP = 0x1A
LOCAL_GET, LOCAL_SET, LOCAL_TEE = 0x20, 0x21, 0x22
I32_LOAD, I32_LOAD8_U = 0x28, 0x2D
I32_STORE, I32_STORE8 = 0x36, 0x3A
MEMORY_SIZE = 0x3F
I32_CONST, I64_CONST, F32_CONST, F64_CONST = 0x41, 0x42, 0x43, 0x44
I32_EQZ, I32_EQ, I32_NE = 0x45, 0x46, 0x47
I32_LT_U, I32_GT_U, I32_LE_U, I32_GE_U = 0x49, 0x4B, 0x4D, 0x4F
I32_ADD, I32_SUB, I32_MUL = 0x6A, 0x6B, 0x6C
I32_AND, I32_OR = 0x71, 0x72
I32_SHL, I32_SHR_U = 0x74, 0x76
I64_ADD, I64_OR, I64_SHL = 0x7C, 0x84, 0x86
F32_NEG, F32_ADD, F32_SUB, F32_MUL, F32_DIV = 0x8C, 0x92, 0x93, 0x94, 0x95
F64_NEG, F64_ADD, F64_SUB, F64_MUL, F64_DIV = 0x99, 0xA0, 0xA1, 0xA2, 0xA3
I64_EXTEND_I32_U = 0xAD

_NO_IMMEDIATE = frozenset(
    [UNREACHABLE, NOP, END, RETURN, DROP, I32_EQZ, I32_EQ, I32_NE, I32_LT_U, I32_GT_U,
     I32_LE_U, I32_GE_U, I32_ADD, I32_SUB, I32_MUL, I32_AND, I32_OR, I32_SHL, I32_SHR_U,
     I64_ADD, I64_OR, I64_SHL, F32_NEG, F32_ADD, F32_SUB, F32_MUL, F32_DIV,
     F64_NEG, F64_ADD, F64_SUB, F64_MUL, F64_DIV, I64_EXTEND_I32_U]
)
_LEB_U_IMMEDIATE = frozenset([BR, BR_IF, LOCAL_GET, LOCAL_SET, LOCAL_TEE])
_MEM_IMMEDIATE = frozenset([I32_LOAD, I32_LOAD8_U, I32_STORE, I32_STORE8])


@dataclass
class _Function:
    type_index: int
    locals: list[str] = field(default_factory=list)
    code: list[tuple] = field(default_factory=list)
    end_of: dict[int, int] = field(default_factory=dict)  # block/loop ip -> matching end ip


@dataclass
class ModuleIR:
    types: list[tuple[tuple[str, ...], tuple[str, ...]]] = field(default_factory=list)
    functions: list[_Function] = field(default_factory=list)
    exports: dict[str, tuple[int, int]] = field(default_factory=dict)  # name -> (kind, idx)
    memory_min_pages: int | None = None


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Trap("truncated module")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def byte(self) -> int:
        return self.take(1)[0]

    def leb_u(self) -> int:
        result = shift = 0
        while True:
            b = self.byte()
            result |= (b & 0x7F) << shift
            if not b & 0x80:
                return result
            shift += 7
            if shift > 63:
                raise Trap("LEB128 too long")

    def leb_s(self, bits: int) -> int:
        result = shift = 0
        while True:
            b = self.byte()
            result |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                if shift < bits and b & 0x40:
                    result |= -1 << shift
                return result
            if shift > bits + 7:
                raise Trap("LEB128 too long")

    def done(self) -> bool:
        return self.pos >= len(self.data)


def decode_module(data: bytes) -> ModuleIR:
    reader = _Reader(data)
    if reader.take(4) != b"\x00\x61\x73\x6d" or reader.take(4) != b"\x01\x00\x00\x00":
        raise Trap("not a wasm v1 module")
    ir = ModuleIR()
    func_types: list[int] = []
    bodies: list[bytes] = []
    while not reader.done():
        section_id = reader.byte()
        body = _Reader(reader.take(reader.leb_u()))
        if section_id == 1:
            for _ in range(body.leb_u()):
                if body.byte() != 0x60:
                    raise Trap("bad functype")
                params = tuple(_valtype(body.byte()) for _ in range(body.leb_u()))
                results = tuple(_valtype(body.byte()) for _ in range(body.leb_u()))
                ir.types.append((params, results))
        elif section_id == 3:
            func_types = [body.leb_u() for _ in range(body.leb_u())]
        elif section_id == 5:
            count = body.leb_u()
            if count > 1:
                raise Trap("at most one memory")
            if count:
                flags = body.byte()
                ir.memory_min_pages = body.leb_u()
                if flags & 0x01:
                    body.leb_u()  # max pages; host config still bounds it
        elif section_id == 7:
            for _ in range(body.leb_u()):
                name = body.take(body.leb_u()).decode("utf-8")
                ir.exports[name] = (body.byte(), body.leb_u())
        elif section_id == 10:
            bodies = [body.take(body.leb_u()) for _ in range(body.leb_u())]
        # other sections are skipped; execution only needs the above
    if len(bodies) != len(func_types):
        raise Trap("function/code count mismatch")
    for type_index, raw in zip(func_types, bodies):
        if type_index >= len(ir.types):
            raise Trap("type index out of range")
        ir.functions.append(_decode_body(raw, type_index))
    return ir


def _valtype(code: int) -> str:
    try:
        return _VALTYPES[code]
    except KeyError:
        raise Trap(f"unknown valtype 0x{code:02x}") from None


def _decode_body(raw: bytes, type_index: int) -> _Function:
    reader = _Reader(raw)
    fn = _Function(type_index)
    for _ in range(reader.leb_u()):
        count = reader.leb_u()
        valtype = _valtype(reader.byte())
        fn.locals.extend([valtype] * count)
    open_blocks: list[int] = []
    depth = 0
    while True:
        if reader.done():
            raise Trap("missing end opcode")
        op = reader.byte()
        ip = len(fn.code)
        if op in (BLOCK, LOOP):
            blocktype = reader.byte()
            if blocktype != 0x40 and blocktype not in _VALTYPES:
                raise Trap("unsupported block type")
            fn.code.append((op, None))
            open_blocks.append(ip)
            depth += 1
        elif op == END:
            if depth == 0:
                fn.code.append((op, None))
                if not reader.done():
                    raise Trap("bytes after function end")
                return fn
            fn.end_of[open_blocks.pop()] = ip
            fn.code.append((op, None))
            depth -= 1
        elif op in _NO_IMMEDIATE:
            fn.code.append((op, None))
        elif op in _LEB_U_IMMEDIATE:
            fn.code.append((op, reader.leb_u()))
        elif op in _MEM_IMMEDIATE:
            reader.leb_u()  # alignment hint, ignored
            fn.code.append((op, reader.leb_u()))  # static offset
        elif op == MEMORY_SIZE:
            reader.byte()
            fn.code.append((op, None))
        elif op == I32_CONST:
            fn.code.append((op, reader.leb_s(32) & 0xFFFFFFFF))
        elif op == I64_CONST:
            fn.code.append((op, reader.leb_s(64) & 0xFFFFFFFFFFFFFFFF))
        elif op == F32_CONST:
            fn.code.append((op, np.float32(struct.unpack("<f", reader.take(4))[0])))
        elif op == F64_CONST:
            fn.code.append((op, np.float64(struct.unpack("<d", reader.take(8))[0])))
        else:
            raise Trap(f"opcode 0x{op:02x} not supported by the sandbox")


class Instance:
    """One sandboxed instantiation: private memory, locals, fuel, deadline."""

    def __init__(self, module: ModuleIR, cfg: SandboxConfig):
        self.module = module
        self.cfg = cfg
        if module.memory_min_pages is not None:
            if module.memory_min_pages > cfg.linear_memory_pages:
                raise Trap(
                    f"module wants {module.memory_min_pages} pages, sandbox allows "
                    f"{cfg.linear_memory_pages}"
                )
            self.memory = bytearray(module.memory_min_pages * PAGE_SIZE)
        else:
            self.memory = bytearray(0)
        self.fuel = cfg.fuel_limit

    def exported_function(self, name: str) -> _Function:
        entry = self.module.exports.get(name)
        if entry is None or entry[0] != 0x00:
            raise Trap(f"no exported function {name!r}")
        index = entry[1]
        if index >= len(self.module.functions):
            raise Trap(f"export {name!r} function index out of range")
        return self.module.functions[index]

    def has_exported_memory(self) -> bool:
        return any(kind == 0x02 for kind, _ in self.module.exports.values())

    def invoke(self, name: str, args: list) -> list:
        fn = self.exported_function(name)
        params, results = self.module.types[fn.type_index]
        if len(args) != len(params):
            raise Trap(f"{name} expects {len(params)} args")
        deadline = time.monotonic() + self.cfg.timeout_s
        with np.errstate(all="ignore"):
            stack = self._run(fn, list(args), deadline)
        if len(stack) < len(results):
            raise Trap("function returned too few values")
        return stack[-len(results):] if results else []

    # The dispatch loop. Values: i32/i64 as unsigned Python ints, floats as
    # numpy scalars. Bounds and budget are enforced on every step.
    def _run(self, fn: _Function, args: list, deadline: float) -> list:
        code = fn.code
        end_of = fn.end_of
        locals_ = args + [_ZERO[t] for t in fn.locals]
        stack: list = []
        control: list[tuple[int, int]] = []  # (opcode BLOCK|LOOP, ip)
        memory = self.memory
        ip = 0
        steps_until_clock = 256
        try:
            while True:
                self.fuel -= 1
                if self.fuel < 0:
                    raise Trap("instruction budget exhausted")
                steps_until_clock -= 1
                if steps_until_clock <= 0:
                    steps_until_clock = 256
                    if time.monotonic() > deadline:
                        raise SandboxTimeout(f"exceeded {self.cfg.timeout_s * 1000:.0f} ms")
                op, operand = code[ip]
                if op == LOCAL_GET:
                    stack.append(locals_[operand])
                elif op == F32_CONST or op == F64_CONST or op == I32_CONST or op == I64_CONST:
                    stack.append(operand)
                elif op == F32_ADD or op == F64_ADD:
                    b = stack.pop()
                    stack[-1] = stack[-1] + b
                elif op == F32_SUB or op == F64_SUB:
                    b = stack.pop()
                    stack[-1] = stack[-1] - b
                elif op == F32_MUL or op == F64_MUL:
                    b = stack.pop()
                    stack[-1] = stack[-1] * b
                elif op == F32_DIV or op == F64_DIV:
                    b = stack.pop()
                    stack[-1] = stack[-1] / b
                elif op == F32_NEG or op == F64_NEG:
                    stack[-1] = -stack[-1]
                elif op == END:
                    if control:
                        control.pop()
                        ip += 1
                        continue
                    return stack
                elif op == LOCAL_SET:
                    locals_[operand] = stack.pop()
                elif op == LOCAL_TEE:
                    locals_[operand] = stack[-1]
                elif op == BLOCK or op == LOOP:
                    control.append((op, ip))
                elif op == BR or op == BR_IF:
                    if op == BR_IF and not stack.pop():
                        ip += 1
                        continue
                    if operand > len(control):
                        raise Trap("branch depth out of range")
                    if operand == len(control):
                        return stack  # branch to the function body label
                    kind, target_ip = control[len(control) - 1 - operand]
                    if kind == LOOP:
                        del control[len(control) - operand:]
                        ip = target_ip + 1
                    else:
                        del control[len(control) - 1 - operand:]
                        ip = end_of[target_ip] + 1
                    continue
                elif op == RETURN:
                    return stack
                elif op == UNREACHABLE:
                    raise Trap("unreachable executed")
                elif op == NOP:
                    pass
                elif op == DROP:
                    stack.pop()
                elif op == I32_LOAD or op == I32_LOAD8_U:
                    size = 4 if op == I32_LOAD else 1
                    addr = stack.pop() + operand
                    if addr < 0 or addr + size > len(memory):
                        raise Trap(f"load at {addr} outside linear memory")
                    raw = memory[addr : addr + size]
                    stack.append(int.from_bytes(raw, "little"))
                elif op == I32_STORE or op == I32_STORE8:
                    size = 4 if op == I32_STORE else 1
                    value = stack.pop()
                    addr = stack.pop() + operand
                    if addr < 0 or addr + size > len(memory):
                        raise Trap(f"store at {addr} outside linear memory")
                    memory[addr : addr + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(
                        size, "little"
                    )
                elif op == MEMORY_SIZE:
                    stack.append(len(memory) // PAGE_SIZE)
                elif op == I32_ADD:
                    b = stack.pop()
                    stack[-1] = (stack[-1] + b) & 0xFFFFFFFF
                elif op == I32_SUB:
                    b = stack.pop()
                    stack[-1] = (stack[-1] - b) & 0xFFFFFFFF
                elif op == I32_MUL:
                    b = stack.pop()
                    stack[-1] = (stack[-1] * b) & 0xFFFFFFFF
                elif op == I32_AND:
                    b = stack.pop()
                    stack[-1] &= b
                elif op == I32_OR:
                    b = stack.pop()
                    stack[-1] |= b
                elif op == I32_SHL:
                    b = stack.pop() % 32
                    stack[-1] = (stack[-1] << b) & 0xFFFFFFFF
                elif op == I32_SHR_U:
                    b = stack.pop() % 32
                    stack[-1] >>= b
                elif op == I32_EQZ:
                    stack[-1] = 1 if stack[-1] == 0 else 0
                elif op == I32_EQ:
                    b = stack.pop()
                    stack[-1] = 1 if stack[-1] == b else 0
                elif op == I32_NE:
                    b = stack.pop()
                    stack[-1] = 1 if stack[-1] != b else 0
                elif op == I32_LT_U:
                    b = stack.pop()
                    stack[-1] = 1 if stack[-1] < b else 0
                elif op == I32_GT_U:
                    b = stack.pop()
                    stack[-1] = 1 if stack[-1] > b else 0
                elif op == I32_LE_U:
                    b = stack.pop()
                    stack[-1] = 1 if stack[-1] <= b else 0
                elif op == I32_GE_U:
                    b = stack.pop()
                    stack[-1] = 1 if stack[-1] >= b else 0
                elif op == I64_ADD:
                    b = stack.pop()
                    stack[-1] = (stack[-1] + b) & 0xFFFFFFFFFFFFFFFF
                elif op == I64_OR:
                    b = stack.pop()
                    stack[-1] |= b
                elif op == I64_SHL:
                    b = stack.pop() % 64
                    stack[-1] = (stack[-1] << b) & 0xFFFFFFFFFFFFFFFF
                elif op == I64_EXTEND_I32_U:
                    stack[-1] = stack[-1] & 0xFFFFFFFF
                else:
                    raise Trap(f"unhandled opcode 0x{op:02x}")
                ip += 1
        except IndexError as exc:
            raise Trap(f"stack underflow: {exc}") from exc


def _coerce_input(value, schema: DataSchema, width: str):
    if schema in INTEGER_SCHEMAS:
        ivalue = int(value)
        low, high = SCHEMA_RANGES[schema]
        if not low <= ivalue <= high:
            raise ValueError(f"{ivalue} outside {schema.name} range")
        return np.float32(ivalue) if width == "f32" else np.float64(ivalue)
    if schema == DataSchema.F32:
        return np.float32(value)
    if schema == DataSchema.F64:
        return np.float64(value)
    raise ValueError(f"schema {schema.name} is not scalar")


def _coerce_output(result, schema: DataSchema):
    if schema == DataSchema.F32:
        return float(np.float32(result))
    if schema == DataSchema.F64:
        return float(result)
    if schema in INTEGER_SCHEMAS:
        value = float(result)
        if value != value or value in (float("inf"), float("-inf")):
            raise TargetOverflow(f"{value} cannot round to {schema.name}")
        rounded = round(value)  # round-half-to-even
        low, high = SCHEMA_RANGES[schema]
        if not low <= rounded <= high:
            raise TargetOverflow(f"{rounded} outside {schema.name} range")
        return rounded
    raise ValueError(f"schema {schema.name} is not scalar")


# Decoded IR is immutable at run time; cache it so warm executions only pay
# for a fresh Instance. Each call still gets its own memory/fuel/stack.
_IR_CACHE: dict[bytes, ModuleIR] = {}


def _cached_ir(wasm_bytes: bytes) -> ModuleIR:
    ir = _IR_CACHE.get(wasm_bytes)
    if ir is None:
        ir = decode_module(wasm_bytes)
        if len(_IR_CACHE) > 256:
            _IR_CACHE.clear()
        _IR_CACHE[wasm_bytes] = ir
    return ir


def execute_scalar(
    adapter: CompiledAdapter, value, cfg: SandboxConfig = SandboxConfig()
):
    """Run the adapter's transform on one scalar, with schema coercion."""
    width = adapter.spec.numeric_width
    module = _cached_ir(adapter.wasm_bytes)
    instance = Instance(module, cfg)
    arg = _coerce_input(value, adapter.spec.source_schema, width)
    results = instance.invoke("transform", [arg])
    return _coerce_output(results[0], adapter.spec.target_schema)


def execute_buffer(
    wasm_bytes: bytes, payload: bytes, cfg: SandboxConfig = SandboxConfig()
) -> bytes:
    """Buffer ABI: write payload into guest memory at a fixed base offset,
    call transform_buf(offset, length), read back the packed i64 result
    (high 32 bits offset, low 32 bits length)."""
    module = decode_module(wasm_bytes)
    instance = Instance(module, cfg)
    if not instance.has_exported_memory():
        raise Trap("buffer ABI requires an exported memory")
    if BUFFER_BASE_OFFSET + len(payload) > len(instance.memory):
        raise Trap(f"payload of {len(payload)} bytes does not fit linear memory")
    instance.memory[BUFFER_BASE_OFFSET : BUFFER_BASE_OFFSET + len(payload)] = payload
    results = instance.invoke("transform_buf", [BUFFER_BASE_OFFSET, len(payload)])
    packed = int(results[0])
    offset = (packed >> 32) & 0xFFFFFFFF
    length = packed & 0xFFFFFFFF
    if offset + length > len(instance.memory):
        raise MalformedResult(f"result [{offset}, {offset + length}) outside linear memory")
    return bytes(instance.memory[offset : offset + length])
