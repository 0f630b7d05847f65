"""Minimal TOML subset parser (Python 3.10 has no tomllib and the package
mirror carries no backport).

Supported: [table] / [[array-of-table]] headers with dotted paths, bare and
quoted keys, dotted key assignment, basic strings with escapes, integers,
floats, booleans, arrays (nested, multi-line) and inline tables. Enough for
adapter descriptors, node configs, intent files and scenario scripts.
"""

from __future__ import annotations


class TomlError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\", "b": "\b", "f": "\f"}


class _Scanner:
    def __init__(self, text: str, line: int):
        self.text = text
        self.pos = 0
        self.line = line

    def error(self, msg: str) -> TomlError:
        return TomlError(msg, self.line)

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip_ws(self, newlines: bool = False) -> None:
        ws = " \t\n" if newlines else " \t"
        while not self.eof():
            ch = self.text[self.pos]
            if ch == "#":
                nl = self.text.find("\n", self.pos)
                if nl == -1 or not newlines:
                    self.pos = len(self.text) if nl == -1 else nl
                    if not newlines:
                        return
                else:
                    self.line += 1
                    self.pos = nl + 1
                continue
            if ch not in ws:
                return
            if ch == "\n":
                self.line += 1
            self.pos += 1

    def take_string(self) -> str:
        assert self.peek() == '"'
        self.pos += 1
        out = []
        while True:
            if self.eof():
                raise self.error("unterminated string")
            ch = self.text[self.pos]
            self.pos += 1
            if ch == '"':
                return "".join(out)
            if ch == "\\":
                if self.eof():
                    raise self.error("dangling escape")
                esc = self.text[self.pos]
                self.pos += 1
                if esc == "u":
                    hexs = self.text[self.pos : self.pos + 4]
                    if len(hexs) != 4:
                        raise self.error("bad \\u escape")
                    out.append(chr(int(hexs, 16)))
                    self.pos += 4
                elif esc in _ESCAPES:
                    out.append(_ESCAPES[esc])
                else:
                    raise self.error(f"unknown escape \\{esc}")
            elif ch == "\n":
                raise self.error("newline in basic string")
            else:
                out.append(ch)

    def take_value(self):
        self.skip_ws(newlines=False)
        ch = self.peek()
        if ch == '"':
            return self.take_string()
        if ch == "[":
            self.pos += 1
            items = []
            while True:
                self.skip_ws(newlines=True)
                if self.peek() == "]":
                    self.pos += 1
                    return items
                items.append(self.take_value())
                self.skip_ws(newlines=True)
                if self.peek() == ",":
                    self.pos += 1
                elif self.peek() != "]":
                    raise self.error("expected ',' or ']' in array")
        if ch == "{":
            self.pos += 1
            table: dict = {}
            self.skip_ws()
            if self.peek() == "}":
                self.pos += 1
                return table
            while True:
                self.skip_ws()
                key = self.take_key()
                self.skip_ws()
                if self.peek() != "=":
                    raise self.error("expected '=' in inline table")
                self.pos += 1
                table[key] = self.take_value()
                self.skip_ws()
                if self.peek() == ",":
                    self.pos += 1
                elif self.peek() == "}":
                    self.pos += 1
                    return table
                else:
                    raise self.error("expected ',' or '}' in inline table")
        return self._take_scalar()

    def _take_scalar(self):
        start = self.pos
        while not self.eof() and self.text[self.pos] not in " \t\n,]}#":
            self.pos += 1
        token = self.text[start : self.pos]
        if not token:
            raise self.error("expected a value")
        if token == "true":
            return True
        if token == "false":
            return False
        cleaned = token.replace("_", "")
        try:
            if any(c in cleaned for c in ".eE") and not cleaned.startswith("0x"):
                return float(cleaned)
            return int(cleaned, 0)
        except ValueError:
            raise self.error(f"cannot parse value {token!r}") from None

    def take_key(self) -> str:
        self.skip_ws()
        if self.peek() == '"':
            return self.take_string()
        start = self.pos
        while not self.eof() and (self.text[self.pos].isalnum() or self.text[self.pos] in "-_"):
            self.pos += 1
        if start == self.pos:
            raise self.error("expected a key")
        return self.text[start : self.pos]


def _walk(root: dict, path: list[str], line: int) -> dict:
    node = root
    for part in path:
        nxt = node.setdefault(part, {})
        if isinstance(nxt, list):
            nxt = nxt[-1]
        if not isinstance(nxt, dict):
            raise TomlError(f"{'.'.join(path)} is not a table", line)
        node = nxt
    return node


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if in_str:
            if ch == '"' and line[i - 1] != "\\":
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            return line[:i]
    return line


def _bracket_depth(text: str) -> int:
    depth = 0
    in_str = False
    prev = ""
    for ch in text:
        if in_str:
            if ch == '"' and prev != "\\":
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        prev = ch
    return depth


def _split_logical_lines(text: str):
    """Yield (line_number, content), joining lines while brackets are open."""
    pending = ""
    pending_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = _strip_comment(raw)
        if not pending:
            if not content.strip():
                continue
            pending_line = lineno
        pending += content + "\n"
        if _bracket_depth(pending) > 0:
            continue
        yield pending_line, pending
        pending = ""
    if pending.strip():
        raise TomlError("unterminated structure at end of file", pending_line)


def parse(text: str) -> dict:
    root: dict = {}
    current = root
    for lineno, logical in _split_logical_lines(text):
        stripped = logical.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[["):
            if not stripped.endswith("]]"):
                raise TomlError("malformed table-array header", lineno)
            path = [p.strip() for p in stripped[2:-2].split(".")]
            parent = _walk(root, path[:-1], lineno)
            arr = parent.setdefault(path[-1], [])
            if not isinstance(arr, list):
                raise TomlError(f"{path[-1]} is not an array of tables", lineno)
            table: dict = {}
            arr.append(table)
            current = table
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise TomlError("malformed table header", lineno)
            path = [p.strip() for p in stripped[1:-1].split(".")]
            current = _walk(root, path, lineno)
            continue
        scanner = _Scanner(logical, lineno)
        key_path = [scanner.take_key()]
        scanner.skip_ws()
        while scanner.peek() == ".":
            scanner.pos += 1
            key_path.append(scanner.take_key())
            scanner.skip_ws()
        if scanner.peek() != "=":
            raise TomlError("expected '=' after key", lineno)
        scanner.pos += 1
        value = scanner.take_value()
        scanner.skip_ws(newlines=True)
        if not scanner.eof():
            raise TomlError(f"trailing content {scanner.text[scanner.pos:]!r}", lineno)
        target = _walk(current, key_path[:-1], lineno) if len(key_path) > 1 else current
        if key_path[-1] in target:
            raise TomlError(f"duplicate key {key_path[-1]!r}", lineno)
        target[key_path[-1]] = value
    return root


def load(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())
