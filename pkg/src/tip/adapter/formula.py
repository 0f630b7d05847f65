"""Recursive-descent parser for scalar conversion formulas.

Grammar (standard precedence, left-associative):

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := NUMBER | 'x' | '-' factor | '(' expr ')'

The single free variable is named x. Numbers are decimal with optional
fraction and exponent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

MAX_DEPTH = 64


class FormulaError(Exception):
    def __init__(self, message: str, position: int | None = None):
        self.position = position
        super().__init__(f"{message} (column {position})" if position is not None else message)


class LexError(FormulaError):
    pass


class UnexpectedToken(FormulaError):
    pass


class UnknownIdentifier(FormulaError):
    pass


class TrailingInput(FormulaError):
    pass


class DepthExceeded(FormulaError):
    pass


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    child: "FormulaAst"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * /
    left: "FormulaAst"
    right: "FormulaAst"


FormulaAst = Union[Const, Var, Neg, Bin]


@dataclass(frozen=True)
class _Token:
    kind: str  # num | ident | op | lparen | rparen | eof
    text: str
    pos: int


def _lex(src: str) -> list[_Token]:
    tokens = []
    i = 0
    n = len(src)
    while i < n:
        ch = src[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch in "+-*/":
            tokens.append(_Token("op", ch, i))
            i += 1
            continue
        if ch == "(":
            tokens.append(_Token("lparen", ch, i))
            i += 1
            continue
        if ch == ")":
            tokens.append(_Token("rparen", ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and src[i + 1].isdigit()):
            j = i
            while j < n and src[j].isdigit():
                j += 1
            if j < n and src[j] == ".":
                j += 1
                while j < n and src[j].isdigit():
                    j += 1
            if j < n and src[j] in "eE":
                k = j + 1
                if k < n and src[k] in "+-":
                    k += 1
                if k >= n or not src[k].isdigit():
                    raise LexError("malformed exponent", j)
                j = k
                while j < n and src[j].isdigit():
                    j += 1
            tokens.append(_Token("num", src[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            tokens.append(_Token("ident", src[i:j], i))
            i = j
            continue
        raise LexError(f"unexpected character {ch!r}", i)
    tokens.append(_Token("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.index = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.current
        self.index += 1
        return token

    def expr(self, depth: int) -> FormulaAst:
        self._check_depth(depth)
        node = self.term(depth + 1)
        while self.current.kind == "op" and self.current.text in "+-":
            op = self.advance().text
            node = Bin(op, node, self.term(depth + 1))
        return node

    def term(self, depth: int) -> FormulaAst:
        self._check_depth(depth)
        node = self.factor(depth + 1)
        while self.current.kind == "op" and self.current.text in "*/":
            op = self.advance().text
            node = Bin(op, node, self.factor(depth + 1))
        return node

    def factor(self, depth: int) -> FormulaAst:
        self._check_depth(depth)
        token = self.current
        if token.kind == "num":
            self.advance()
            return Const(float(token.text))
        if token.kind == "ident":
            if token.text != "x":
                raise UnknownIdentifier(f"unknown identifier {token.text!r}", token.pos)
            self.advance()
            return Var()
        if token.kind == "op" and token.text == "-":
            self.advance()
            return Neg(self.factor(depth + 1))
        if token.kind == "lparen":
            self.advance()
            node = self.expr(depth + 1)
            if self.current.kind != "rparen":
                raise UnexpectedToken("expected ')'", self.current.pos)
            self.advance()
            return node
        raise UnexpectedToken(f"unexpected {token.text or 'end of input'!r}", token.pos)

    @staticmethod
    def _check_depth(depth: int) -> None:
        if depth > MAX_DEPTH:
            raise DepthExceeded(f"expression nests deeper than {MAX_DEPTH}")


def parse_formula(src: str) -> FormulaAst:
    parser = _Parser(_lex(src))
    ast = parser.expr(0)
    if parser.current.kind != "eof":
        raise TrailingInput(f"trailing input {parser.current.text!r}", parser.current.pos)
    return ast


def ast_depth(ast: FormulaAst) -> int:
    if isinstance(ast, (Const, Var)):
        return 1
    if isinstance(ast, Neg):
        return 1 + ast_depth(ast.child)
    return 1 + max(ast_depth(ast.left), ast_depth(ast.right))
