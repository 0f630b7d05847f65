"""Tiny hand assembler for buffer-ABI and hostile test modules; independent
of the emitter apart from the LEB128 primitives."""

from __future__ import annotations

from tip.adapter.emitter import leb128_s, leb128_u

I32, I64, F32, F64 = 0x7F, 0x7E, 0x7D, 0x7C


def section(section_id: int, content: bytes) -> bytes:
    return bytes([section_id]) + leb128_u(len(content)) + content


def module(*sections: bytes) -> bytes:
    return b"\x00\x61\x73\x6d\x01\x00\x00\x00" + b"".join(sections)


def type_section(*functypes: tuple) -> bytes:
    out = leb128_u(len(functypes))
    for params, results in functypes:
        out += b"\x60" + leb128_u(len(params)) + bytes(params)
        out += leb128_u(len(results)) + bytes(results)
    return section(1, out)


def function_section(*type_indices: int) -> bytes:
    out = leb128_u(len(type_indices))
    for index in type_indices:
        out += leb128_u(index)
    return section(3, out)


def memory_section(min_pages: int) -> bytes:
    return section(5, leb128_u(1) + b"\x00" + leb128_u(min_pages))


def export_section(*exports: tuple) -> bytes:
    out = leb128_u(len(exports))
    for name, kind, index in exports:
        encoded = name.encode()
        out += leb128_u(len(encoded)) + encoded + bytes([kind]) + leb128_u(index)
    return section(7, out)


def code_section(*bodies: bytes) -> bytes:
    out = leb128_u(len(bodies))
    for body in bodies:
        out += leb128_u(len(body)) + body
    return section(10, out)


def body(locals_spec: list[tuple[int, int]], instructions: bytes) -> bytes:
    out = leb128_u(len(locals_spec))
    for count, valtype in locals_spec:
        out += leb128_u(count) + bytes([valtype])
    return out + instructions + b"\x0b"


def i32_const(value: int) -> bytes:
    return b"\x41" + leb128_s(value)


def i64_const(value: int) -> bytes:
    if value >= 1 << 63:
        value -= 1 << 64
    return b"\x42" + leb128_s(value)


def local_get(index: int) -> bytes:
    return b"\x20" + leb128_u(index)


def local_set(index: int) -> bytes:
    return b"\x21" + leb128_u(index)


BUF_TYPE = ((I32, I32), (I64,))


def packed_result(offset_expr: bytes, length_expr: bytes) -> bytes:
    """(offset << 32) | length as an i64."""
    return (
        offset_expr + b"\xad"  # i64.extend_i32_u
        + i64_const(32) + b"\x86"  # i64.shl
        + length_expr + b"\xad" + b"\x84"  # i64.or
    )


def identity_buffer_module() -> bytes:
    """transform_buf returns the input region untouched."""
    instructions = packed_result(local_get(0), local_get(1))
    return module(
        type_section(BUF_TYPE),
        function_section(0),
        memory_section(1),
        export_section(("memory", 0x02, 0), ("transform_buf", 0x00, 0)),
        code_section(body([], instructions)),
    )


def copying_buffer_module(dest: int = 8192) -> bytes:
    """Copies input bytes to `dest` and returns that region (exercises the
    load/store and loop paths)."""
    copy_loop = (
        b"\x02\x40"  # block
        + b"\x03\x40"  # loop
        + local_get(2) + local_get(1) + b"\x4f"  # i >= len ?
        + b"\x0d" + leb128_u(1)  # br_if 1 (exit block)
        + local_get(2) + i32_const(dest) + b"\x6a"  # dest + i
        + local_get(0) + local_get(2) + b"\x6a"  # offset + i
        + b"\x2d\x00\x00"  # i32.load8_u align=0 offset=0
        + b"\x3a\x00\x00"  # i32.store8
        + local_get(2) + i32_const(1) + b"\x6a" + local_set(2)
        + b"\x0c" + leb128_u(0)  # br 0 (continue loop)
        + b"\x0b"  # end loop
        + b"\x0b"  # end block
    )
    instructions = copy_loop + packed_result(i32_const(dest), local_get(1))
    return module(
        type_section(BUF_TYPE),
        function_section(0),
        memory_section(1),
        export_section(("memory", 0x02, 0), ("transform_buf", 0x00, 0)),
        code_section(body([(1, I32)], instructions)),
    )


def oob_result_module() -> bytes:
    """Claims a result region far beyond linear memory."""
    instructions = packed_result(i32_const(65000), i32_const(60000))
    return module(
        type_section(BUF_TYPE),
        function_section(0),
        memory_section(1),
        export_section(("memory", 0x02, 0), ("transform_buf", 0x00, 0)),
        code_section(body([], instructions)),
    )


def oob_store_module() -> bytes:
    """Writes one byte far outside the single 64 KiB page."""
    instructions = (
        i32_const(1_000_000) + i32_const(0x41) + b"\x3a\x00\x00"
        + packed_result(local_get(0), local_get(1))
    )
    return module(
        type_section(BUF_TYPE),
        function_section(0),
        memory_section(1),
        export_section(("memory", 0x02, 0), ("transform_buf", 0x00, 0)),
        code_section(body([], instructions)),
    )


def infinite_loop_module() -> bytes:
    instructions = b"\x03\x40" + b"\x0c\x00" + b"\x0b" + i64_const(0)
    return module(
        type_section(BUF_TYPE),
        function_section(0),
        memory_section(1),
        export_section(("memory", 0x02, 0), ("transform_buf", 0x00, 0)),
        code_section(body([], instructions)),
    )


def scalar_infinite_loop_module() -> bytes:
    """(f32)->f32 transform that never returns."""
    instructions = b"\x03\x40" + b"\x0c\x00" + b"\x0b" + local_get(0)
    return module(
        type_section(((F32,), (F32,))),
        function_section(0),
        export_section(("transform", 0x00, 0)),
        code_section(body([], instructions)),
    )
