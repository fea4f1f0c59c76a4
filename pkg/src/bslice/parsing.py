"""Recursive-descent parser for the expression grammar.

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' integer)?
    base   := number | 'pi' | ident | '(' expr ')'
            | ('sin'|'cos'|'exp'|'log') '(' expr ')' | '-' base

Integers after ``^`` may carry a sign.  Whitespace is insignificant.
"""
from __future__ import annotations

import re
from fractions import Fraction
from typing import Iterable, Mapping

from . import expr as E
from .charts import Chart
from .expr import ParseError, UnknownIdentifierError

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)|([A-Za-z_][A-Za-z_0-9]*)|(.))")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        if m.group(1):
            out.append(("num", m.group(1), m.start(1)))
        elif m.group(2):
            out.append(("id", m.group(2), m.start(2)))
        elif m.group(3):
            out.append(("op", m.group(3), m.start(3)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, names: set[str], constants: Mapping[str, E.Expr]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.names = names
        self.constants = constants

    @property
    def tok(self):
        return self.toks[self.i]

    def take(self, value: str | None = None):
        kind, val, pos = self.tok
        if value is not None and val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", pos)
        self.i += 1
        return kind, val, pos

    def parse(self) -> E.Expr:
        e = self.expr()
        kind, val, pos = self.tok
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos)
        return e

    def expr(self) -> E.Expr:
        terms = [self.term()]
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            _, op, _ = self.take()
            t = self.term()
            terms.append(t if op == "+" else E.Mul((E.MINUS_ONE, t)))
        return terms[0] if len(terms) == 1 else E.Add(terms)

    def term(self) -> E.Expr:
        factors = [self.factor()]
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            _, op, pos = self.take()
            f = self.factor()
            if op == "/":
                if isinstance(f, E.Const) and f.value == 0:
                    raise ParseError("division by zero", pos)
                f = E.Pow(f, -1)
            factors.append(f)
        return factors[0] if len(factors) == 1 else E.Mul(factors)

    def factor(self) -> E.Expr:
        b = self.base()
        if self.tok[1] == "^":
            self.take()
            sign = 1
            if self.tok[1] in ("-", "+"):
                sign = -1 if self.take()[1] == "-" else 1
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ParseError("exponent must be an integer", pos)
            n = sign * int(val)
            if n < 0 and isinstance(b, E.Const) and b.value == 0:
                raise ParseError("division by zero", pos)
            return E.Pow(b, n)
        return b

    def base(self) -> E.Expr:
        kind, val, pos = self.tok
        if kind == "num":
            self.take()
            return E.Const(Fraction(val))
        if kind == "op" and val == "(":
            self.take()
            e = self.expr()
            self.take(")")
            return e
        if kind == "op" and val == "-":
            self.take()
            return E.Mul((E.MINUS_ONE, self.base()))
        if kind == "id":
            self.take()
            if val in E.FUNCTIONS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return E.Func(val, arg)
            if val == "pi":
                return E.PI
            if val in self.constants:
                return self.constants[val]
            if val in self.names:
                return E.Var(val)
            raise UnknownIdentifierError(f"unknown identifier {val!r}", pos)
        if kind == "end":
            raise ParseError("unexpected end of input", pos)
        raise ParseError(f"unexpected {val!r}", pos)


def parse(
    text: str,
    chart: Chart | Iterable[str],
    extra_names: Iterable[str] = (),
    constants: Mapping[str, object] | None = None,
) -> E.Expr:
    """Parse ``text`` into a normalized expression.

    Identifiers must be coordinates of ``chart``, one of ``extra_names``
    (e.g. group parameters) or a key of ``constants``.
    """
    names = set(chart.names if isinstance(chart, Chart) else chart) | set(extra_names)
    consts = {k: E.as_expr(v) for k, v in (constants or {}).items()}
    try:
        tree = _Parser(text, names, consts).parse()
        return E.normalize(tree)
    except E.ExprError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), 0) from exc
