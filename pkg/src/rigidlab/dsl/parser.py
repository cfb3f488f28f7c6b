"""Recursive-descent parser for the Hamiltonian grammar.

    expr     := term (('+'|'-') term)*
    term     := unary (('*'|'/') unary)*
    unary    := ('-'|'+') unary | power
    power    := base ('^' unary)?
    base     := number | ident | '(' expr ')' | func '(' expr ')'

Identifiers are q1..qn, p1..pn, the parameter k and the constant pi.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from . import expr as E


class DSLError(ValueError):
    pass


class DSLSyntaxError(DSLError):
    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        super().__init__(f"{message} at position {position}")


class UnknownIdentifierError(DSLSyntaxError):
    pass


class ArityError(DSLSyntaxError):
    pass


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(source: str) -> list[Token]:
    out, pos = [], 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {source[pos]!r}", pos, source)
        if m.lastgroup != "ws":
            out.append(Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    out.append(Token("end", "", len(source)))
    return out


def allowed_identifiers(dim: int) -> set[str]:
    names = {f"q{i + 1}" for i in range(dim)} | {f"p{i + 1}" for i in range(dim)}
    return names | {"k"}


class _Parser:
    def __init__(self, source: str, dim: int):
        self.source = source
        self.tokens = tokenize(source)
        self.i = 0
        self.idents = allowed_identifiers(dim)

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise DSLSyntaxError(f"expected {text!r}, found {found!r}", self.tok.pos, self.source)
        return self.advance()

    def parse(self) -> E.Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise DSLSyntaxError(f"unexpected {self.tok.text!r}", self.tok.pos, self.source)
        return node

    def expr(self) -> E.Node:
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            rhs = self.term()
            node = E.add(node, rhs) if op == "+" else E.sub(node, rhs)
        return node

    def term(self) -> E.Node:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            rhs = self.unary()
            node = E.mul(node, rhs) if op == "*" else E.div(node, rhs)
        return node

    def unary(self) -> E.Node:
        if self.tok.text == "-":
            self.advance()
            return E.neg(self.unary())
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> E.Node:
        node = self.base()
        if self.tok.text == "^":
            self.advance()
            node = E.power(node, self.unary())
        return node

    def base(self) -> E.Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return E.Const(float(t.text))
        if t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if t.kind == "name":
            self.advance()
            if t.text in E.FUNCTIONS:
                if self.tok.text != "(":
                    raise ArityError(f"function {t.text} needs one parenthesized argument",
                                     self.tok.pos, self.source)
                self.advance()
                if self.tok.text == ")":
                    raise ArityError(f"function {t.text} takes exactly one argument, got 0",
                                     self.tok.pos, self.source)
                arg = self.expr()
                nargs = 1
                while self.tok.text == ",":
                    self.advance()
                    self.expr()
                    nargs += 1
                if nargs != 1:
                    raise ArityError(f"function {t.text} takes exactly one argument, got {nargs}",
                                     t.pos, self.source)
                self.expect(")")
                return E.func(t.text, arg)
            if self.tok.text == "(":
                raise UnknownIdentifierError(f"unknown function {t.text!r}", t.pos, self.source)
            if t.text == "pi":
                return E.Const(math.pi)
            if t.text not in self.idents:
                raise UnknownIdentifierError(f"unknown identifier {t.text!r}", t.pos, self.source)
            return E.Var(t.text)
        found = t.text or "end of input"
        raise DSLSyntaxError(f"unexpected {found!r}", t.pos, self.source)


def parse_node(source: str, dim: int) -> E.Node:
    return _Parser(source, dim).parse()
