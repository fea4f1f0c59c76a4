"""Scalar expressions over named chart coordinates.

Expressions are immutable trees.  Every public constructor returns a
normalized tree, so structural equality is a cheap first test of equality;
:func:`equivalent` falls back on seeded numerical sampling.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log")
EQUIV_RTOL = 1e-9
EQUIV_SAMPLES = 64
QUAD_NODES = 24


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(ParseError):
    pass


class EvaluationError(ExprError):
    """Raised when a node is evaluated outside its domain."""

    def __init__(self, message: str, node: "Expr"):
        super().__init__(f"{message}: {to_string(node)}")
        self.node = node


class SamplingError(ExprError):
    pass


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------


class Expr:
    __slots__ = ("_key", "_hash")

    def __init__(self, key: tuple):
        self._key = key
        self._hash = hash(key)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return isinstance(other, Expr) and self._hash == other._hash and self._key == other._key

    def __lt__(self, other: "Expr") -> bool:
        return self._key < other._key

    def __repr__(self) -> str:
        return f"Expr({to_string(self)!r})"

    def __str__(self) -> str:
        return to_string(self)

    # arithmetic sugar; results are normalized
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return mul(self, power(as_expr(other), -1))

    def __rtruediv__(self, other):
        return mul(as_expr(other), power(self, -1))

    def __neg__(self):
        return neg(self)

    def __pow__(self, n: int):
        return power(self, n)


class Const(Expr):
    """Exact constant ``value * pi**pi_power``."""

    __slots__ = ("value", "pi_power")

    def __init__(self, value, pi_power: int = 0):
        value = Fraction(value)
        if value == 0:
            pi_power = 0
        self.value = value
        self.pi_power = pi_power
        super().__init__(("C", value.numerator, value.denominator, pi_power))

    def __float__(self) -> float:
        return float(self.value) * math.pi**self.pi_power

    @property
    def is_rational(self) -> bool:
        return self.pi_power == 0


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name
        super().__init__(("V", name))


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms: Sequence[Expr]):
        self.terms = tuple(terms)
        super().__init__(("A", tuple(t._key for t in self.terms)))


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors: Sequence[Expr]):
        self.factors = tuple(factors)
        super().__init__(("M", tuple(f._key for f in self.factors)))


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base: Expr, exp: int):
        self.base = base
        self.exp = int(exp)
        super().__init__(("P", base._key, self.exp))


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Expr):
        if name not in FUNCTIONS:
            raise ExprError(f"unknown function {name!r}")
        self.name = name
        self.arg = arg
        super().__init__(("F", name, arg._key))


class Integral(Expr):
    """``integral_0^1 body d(var)``, evaluated by Gauss-Legendre quadrature.

    Produced by homotopy operators and path integrals when no polynomial
    antiderivative exists.  Not part of the text grammar.
    """

    __slots__ = ("body", "var")

    def __init__(self, body: Expr, var: str):
        self.body = body
        self.var = var
        super().__init__(("I", var, body._key))


ZERO = Const(0)
ONE = Const(1)
MINUS_ONE = Const(-1)
PI = Const(1, 1)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return Const(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ExprError(f"non-finite constant {x}")
        return Const(Fraction(x))
    if isinstance(x, str):
        return Var(x)
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def _split_coeff(e: Expr) -> tuple[Fraction, int, Expr]:
    """Split ``e`` into rational coefficient, pi power and the remaining factor."""
    if isinstance(e, Const):
        return e.value, e.pi_power, ONE
    if isinstance(e, Mul) and isinstance(e.factors[0], Const):
        c = e.factors[0]
        rest = e.factors[1:]
        return c.value, c.pi_power, rest[0] if len(rest) == 1 else Mul(rest)
    return Fraction(1), 0, e


def _make_mul(coeff: Fraction, pi_power: int, rest: Expr) -> Expr:
    if coeff == 0:
        return ZERO
    c = Const(coeff, pi_power)
    if rest == ONE:
        return c
    if c == ONE:
        return rest
    if isinstance(rest, Mul):
        return Mul((c,) + rest.factors)
    return Mul((c, rest))


def _norm_add(terms: Iterable[Expr]) -> Expr:
    flat: list[Expr] = []
    for t in terms:
        if isinstance(t, Add):
            flat.extend(t.terms)
        else:
            flat.append(t)
    groups: dict[tuple, list] = {}
    for t in flat:
        coeff, pp, rest = _split_coeff(t)
        key = (pp, rest)
        if key in groups:
            groups[key][0] += coeff
        else:
            groups[key] = [coeff, pp, rest]
    out = [_make_mul(c, pp, rest) for c, pp, rest in groups.values() if c != 0]
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    out.sort()
    return Add(out)


def _base_exp(f: Expr) -> tuple[Expr, int]:
    if isinstance(f, Pow):
        return f.base, f.exp
    return f, 1


def _norm_mul(factors: Iterable[Expr]) -> Expr:
    coeff = Fraction(1)
    pp = 0
    powers: dict[Expr, int] = {}
    stack = list(factors)
    while stack:
        f = stack.pop()
        if isinstance(f, Mul):
            stack.extend(f.factors)
            continue
        if isinstance(f, Const):
            coeff *= f.value
            pp += f.pi_power
            continue
        b, n = _base_exp(f)
        powers[b] = powers.get(b, 0) + n
    if coeff == 0:
        return ZERO
    rest = []
    for b, n in powers.items():
        if n == 0:
            continue
        rest.append(b if n == 1 else Pow(b, n))
    rest.sort()
    if not rest:
        return Const(coeff, pp)
    r = rest[0] if len(rest) == 1 else Mul(rest)
    return _make_mul(coeff, pp, r)


def _norm_pow(base: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0:
            if n < 0:
                raise ExprError("division by zero constant")
            return ZERO
        return Const(base.value**n, base.pi_power * n)
    if isinstance(base, Pow):
        return _norm_pow(base.base, base.exp * n)
    if isinstance(base, Mul):
        return _norm_mul(_norm_pow(f, n) for f in base.factors)
    return Pow(base, n)


def _pi_multiple(e: Expr) -> Fraction | None:
    if isinstance(e, Const) and e.pi_power == 1:
        return e.value
    if e == ZERO:
        return Fraction(0)
    return None


def _norm_func(name: str, arg: Expr) -> Expr:
    if name == "exp":
        if arg == ZERO:
            return ONE
        if isinstance(arg, Func) and arg.name == "log":
            return arg.arg
    elif name == "log":
        if arg == ONE:
            return ZERO
        if isinstance(arg, Func) and arg.name == "exp":
            return arg.arg
    else:
        m = _pi_multiple(arg)
        if m is not None:
            if name == "sin" and m.denominator in (1, 2):
                return Const([0, 1, 0, -1][int(2 * m) % 4])
            if name == "cos" and m.denominator in (1, 2):
                return Const([1, 0, -1, 0][int(2 * m) % 4])
    return Func(name, arg)


def _norm_integral(body: Expr, var: str) -> Expr:
    if var not in free_vars(body):
        return body
    coeffs = polynomial_coefficients(body, var)
    if coeffs is not None:
        return _norm_add(mul(c, Const(Fraction(1, n + 1))) for n, c in coeffs.items())
    return Integral(body, var)


def _normalize_once(e: Expr) -> Expr:
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Add):
        return _norm_add(_normalize_once(t) for t in e.terms)
    if isinstance(e, Mul):
        return _norm_mul([_normalize_once(f) for f in e.factors])
    if isinstance(e, Pow):
        return _norm_pow(_normalize_once(e.base), e.exp)
    if isinstance(e, Func):
        return _norm_func(e.name, _normalize_once(e.arg))
    if isinstance(e, Integral):
        return _norm_integral(_normalize_once(e.body), e.var)
    raise TypeError(type(e))


@functools.lru_cache(maxsize=65536)
def normalize(e: Expr) -> Expr:
    """Return the normal form of ``e``; ``normalize`` is idempotent."""
    for _ in range(32):
        n = _normalize_once(e)
        if n == e:
            return n
        e = n
    return e


def add(*terms: Expr) -> Expr:
    return normalize(_norm_add(terms))


def mul(*factors: Expr) -> Expr:
    return normalize(_norm_mul(factors))


def neg(e: Expr) -> Expr:
    return mul(MINUS_ONE, e)


def power(e: Expr, n: int) -> Expr:
    return normalize(_norm_pow(e, n))


def func(name: str, arg: Expr) -> Expr:
    return normalize(_norm_func(name, as_expr(arg)))


def sin(e) -> Expr:
    return func("sin", e)


def cos(e) -> Expr:
    return func("cos", e)


def exp(e) -> Expr:
    return func("exp", e)


def log(e) -> Expr:
    return func("log", e)


def integral(body: Expr, var: str) -> Expr:
    return normalize(Integral(body, var))


def const(value, pi_power: int = 0) -> Const:
    return Const(value, pi_power)


def var(name: str) -> Var:
    return Var(name)


# ---------------------------------------------------------------------------
# structure queries
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=65536)
def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Integral):
        return free_vars(e.body) - {e.var}
    return frozenset().union(*(free_vars(c) for c in children(e)))


def children(e: Expr) -> tuple:
    if isinstance(e, Add):
        return e.terms
    if isinstance(e, Mul):
        return e.factors
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, Func):
        return (e.arg,)
    if isinstance(e, Integral):
        return (e.body,)
    return ()


def _distribute(factors: Iterable[Expr]) -> Expr:
    acc: list[Expr] = [ONE]
    for f in factors:
        parts = f.terms if isinstance(f, Add) else (f,)
        acc = [_norm_mul((a, p)) for a in acc for p in parts]
    return add(*acc)


def expand(e: Expr) -> Expr:
    """Distribute products and non-negative integer powers over sums."""
    e = normalize(e)
    if isinstance(e, Add):
        return add(*(expand(t) for t in e.terms))
    if isinstance(e, Mul):
        return _distribute([expand(f) for f in e.factors])
    if isinstance(e, Pow) and e.exp > 1:
        b = expand(e.base)
        if isinstance(b, Add):
            return _distribute([b] * e.exp)
    return e


def _float_const(v: float) -> Const:
    q = Fraction(v).limit_denominator(10**6)
    return Const(q if abs(float(q) - v) <= 1e-13 * max(1.0, abs(v)) else Fraction(v))


def fold_constants(e: Expr) -> Expr:
    """Replace closed transcendental subexpressions by nearby exact fractions.

    Used where a numerical average would otherwise keep dozens of
    ``sin(k pi/n)`` factors alive.
    """
    if isinstance(e, Const):
        return _float_const(float(e)) if e.value.denominator > 10**12 else e
    if isinstance(e, Var):
        return e
    if not free_vars(e):
        return _float_const(evaluate(e, {}))
    if isinstance(e, Add):
        return add(*(fold_constants(t) for t in e.terms))
    if isinstance(e, Mul):
        return mul(*(fold_constants(f) for f in e.factors))
    if isinstance(e, Pow):
        return power(fold_constants(e.base), e.exp)
    if isinstance(e, Func):
        return func(e.name, fold_constants(e.arg))
    if isinstance(e, Integral):
        return integral(fold_constants(e.body), e.var)
    raise TypeError(type(e))


def polynomial_coefficients(e: Expr, name: str) -> dict[int, Expr] | None:
    """Coefficients of ``e`` as a polynomial in ``name``, or None."""
    e = expand(e)
    terms = e.terms if isinstance(e, Add) else (e,)
    out: dict[int, list] = {}
    for t in terms:
        factors = t.factors if isinstance(t, Mul) else (t,)
        deg = 0
        rest = []
        for f in factors:
            b, n = _base_exp(f)
            if b == Var(name):
                if n < 0:
                    return None
                deg += n
            elif name in free_vars(f):
                return None
            else:
                rest.append(f)
        out.setdefault(deg, []).append(_norm_mul(rest) if rest else ONE)
    return {d: add(*cs) for d, cs in out.items()}


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions and normalize."""
    mapping = {k: as_expr(v) for k, v in mapping.items()}
    if not mapping or not (free_vars(e) & mapping.keys()):
        return e
    return normalize(_subst(e, mapping))


def _subst(e: Expr, m: Mapping[str, Expr]) -> Expr:
    if isinstance(e, Var):
        return m.get(e.name, e)
    if isinstance(e, Const):
        return e
    if not (free_vars(e) & m.keys()):
        return e
    if isinstance(e, Add):
        return Add([_subst(t, m) for t in e.terms])
    if isinstance(e, Mul):
        return Mul([_subst(f, m) for f in e.factors])
    if isinstance(e, Pow):
        return Pow(_subst(e.base, m), e.exp)
    if isinstance(e, Func):
        return Func(e.name, _subst(e.arg, m))
    if isinstance(e, Integral):
        inner = {k: v for k, v in m.items() if k != e.var}
        clash = any(e.var in free_vars(v) for v in inner.values())
        if clash:
            raise ExprError(f"substitution captures integration variable {e.var!r}")
        return Integral(_subst(e.body, inner), e.var)
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=65536)
def differentiate(e: Expr, name: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to the variable ``name``."""
    if isinstance(name, Var):
        name = name.name
    elif not isinstance(name, str):
        name = name.name
    if name not in free_vars(e):
        return ZERO
    return normalize(_diff(e, name))


def _diff(e: Expr, x: str) -> Expr:
    if x not in free_vars(e):
        return ZERO
    if isinstance(e, Var):
        return ONE
    if isinstance(e, Add):
        return Add([_diff(t, x) for t in e.terms])
    if isinstance(e, Mul):
        fs = e.factors
        terms = []
        for i, f in enumerate(fs):
            if x in free_vars(f):
                terms.append(Mul(fs[:i] + (_diff(f, x),) + fs[i + 1 :]))
        return Add(terms)
    if isinstance(e, Pow):
        return Mul((Const(e.exp), Pow(e.base, e.exp - 1), _diff(e.base, x)))
    if isinstance(e, Func):
        a = e.arg
        da = _diff(a, x)
        if e.name == "sin":
            return Mul((Func("cos", a), da))
        if e.name == "cos":
            return Mul((MINUS_ONE, Func("sin", a), da))
        if e.name == "exp":
            return Mul((e, da))
        return Mul((Pow(a, -1), da))
    if isinstance(e, Integral):
        return Integral(_diff(e.body, x), e.var)
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(e: Expr, point: Mapping[str, float]) -> float:
    """Evaluate at a point, raising :class:`EvaluationError` on domain violations."""
    return float(_eval_strict(e, point))


def _eval_strict(e: Expr, p: Mapping[str, float]) -> float:
    if isinstance(e, Const):
        return float(e)
    if isinstance(e, Var):
        try:
            return float(p[e.name])
        except KeyError:
            raise EvaluationError(f"no value for coordinate {e.name!r}", e) from None
    if isinstance(e, Add):
        return math.fsum(_eval_strict(t, p) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= _eval_strict(f, p)
        return out
    if isinstance(e, Pow):
        b = _eval_strict(e.base, p)
        if e.exp < 0 and b == 0.0:
            raise EvaluationError("division by zero", e.base)
        return b**e.exp
    if isinstance(e, Func):
        a = _eval_strict(e.arg, p)
        if e.name == "log":
            if a <= 0.0:
                raise EvaluationError("log of non-positive value", e.arg)
            return math.log(a)
        try:
            return getattr(math, e.name)(a)
        except OverflowError:
            raise EvaluationError("overflow", e) from None
    if isinstance(e, Integral):
        nodes, weights = _gauss_nodes()
        total = 0.0
        for s, w in zip(nodes, weights):
            q = dict(p)
            q[e.var] = float(s)
            total += w * _eval_strict(e.body, q)
        return total
    raise TypeError(type(e))


@functools.lru_cache(maxsize=1)
def _gauss_nodes() -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(QUAD_NODES)
    return (x + 1.0) / 2.0, w / 2.0


class _Codegen:
    def __init__(self, names: Sequence[str]):
        self.names = {n: f"_v{i}" for i, n in enumerate(names)}
        self.helpers: dict[str, object] = {}

    def code(self, e: Expr) -> str:
        if isinstance(e, Const):
            return repr(float(e))
        if isinstance(e, Var):
            if e.name not in self.names:
                raise ExprError(f"unbound variable {e.name!r}")
            return self.names[e.name]
        if isinstance(e, Add):
            return "(" + " + ".join(self.code(t) for t in e.terms) + ")"
        if isinstance(e, Mul):
            return "(" + " * ".join(self.code(f) for f in e.factors) + ")"
        if isinstance(e, Pow):
            b = self.code(e.base)
            if e.exp > 0:
                return f"({b} ** {e.exp})"
            return f"(1.0 / ({b} ** {-e.exp}))"
        if isinstance(e, Func):
            return f"_np.{e.name}({self.code(e.arg)})"
        if isinstance(e, Integral):
            inner_names = list(self.names) + [e.var]
            body = lambdify(e.body, tuple(inner_names))
            h = f"_h{len(self.helpers)}"
            self.helpers[h] = _make_quadrature(body)
            return f"{h}({', '.join(self.names.values())})"
        raise TypeError(type(e))


def _make_quadrature(body: Callable) -> Callable:
    nodes, weights = _gauss_nodes()

    def quad(*args):
        total = 0.0
        for s, w in zip(nodes, weights):
            total = total + w * body(*args, s)
        return total

    return quad


@functools.lru_cache(maxsize=16384)
def lambdify(e: Expr, names: tuple) -> Callable:
    """Compile ``e`` into a numpy function of the coordinates ``names``.

    The compiled function never raises on domain problems; it yields inf/nan,
    which callers mask.
    """
    gen = _Codegen(names)
    src = gen.code(e)
    args = ", ".join(gen.names[n] for n in names)
    ns: dict = {"_np": np, **gen.helpers}
    exec(f"def _f({args}):\n    return {src}\n", ns)
    f = ns["_f"]
    if not (free_vars(e)):
        c = f(*([0.0] * len(names)))

        def constant(*arrays):
            shape = np.broadcast(*arrays).shape if arrays else ()
            return np.full(shape, c, dtype=float)

        return constant
    return f


def evaluate_array(e: Expr, env: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorized evaluation; invalid points come back as nan or inf."""
    names = tuple(sorted(env))
    f = lambdify(e, names)
    with np.errstate(all="ignore"):
        out = f(*(np.asarray(env[n], dtype=float) for n in names))
    return np.asarray(out, dtype=float)


def evaluate_limit(
    e: Expr, env: Mapping[str, np.ndarray], name: str, h: float = 1e-6
) -> np.ndarray:
    """Vectorized evaluation that fills removable singularities in ``name``.

    Wherever the direct value is not finite the symmetric average of the
    values at ``name +- h`` is used instead (error O(h^2) for smooth limits).
    """
    out = evaluate_array(e, env)
    bad = ~np.isfinite(out)
    if bad.any() and name in free_vars(e):
        shape = np.broadcast(*env.values()).shape
        base = {k: np.broadcast_to(np.asarray(v, dtype=float), shape) for k, v in env.items()}
        plus = dict(base)
        minus = dict(base)
        plus[name] = base[name] + h
        minus[name] = base[name] - h
        fill = 0.5 * (evaluate_array(e, plus) + evaluate_array(e, minus))
        out = np.where(bad, fill, out)
    return out


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------


def _rational_str(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def _const_str(c: Const) -> str:
    if c.pi_power == 0:
        s = _rational_str(c.value)
        return s if c.value.denominator == 1 and c.value >= 0 else f"({s})"
    pi = "pi" if c.pi_power == 1 else f"pi^{c.pi_power}"
    if c.value == 1:
        return pi
    return f"({_rational_str(c.value)}*{pi})"


def _atom(e: Expr) -> str:
    """Print ``e`` so that it can stand as the base of ``^``."""
    s = to_string(e)
    if isinstance(e, (Var, Func)) or (isinstance(e, Const) and s[0] != "("):
        return s
    if s.startswith("(") and _balanced_outer(s):
        return s
    return f"({s})"


def _balanced_outer(s: str) -> bool:
    depth = 0
    for i, ch in enumerate(s):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0 and i != len(s) - 1:
                return False
    return True


def _factor_str(e: Expr) -> str:
    if isinstance(e, Add):
        return f"({to_string(e)})"
    if isinstance(e, Pow):
        return f"{_atom(e.base)}^{e.exp}"
    return to_string(e)


@functools.lru_cache(maxsize=65536)
def to_string(e: Expr) -> str:
    """Print in the text grammar accepted by :func:`parse`."""
    if isinstance(e, Const):
        return _const_str(e)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        parts = []
        for i, t in enumerate(e.terms):
            coeff, pp, rest = _split_coeff(t)
            if i > 0 and coeff < 0:
                parts.append(" - " + to_string(_make_mul(-coeff, pp, rest)))
            else:
                parts.append((" + " if i else "") + to_string(t))
        return "".join(parts)
    if isinstance(e, Mul):
        return "*".join(_factor_str(f) for f in e.factors)
    if isinstance(e, Pow):
        return _factor_str(e)
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.arg)})"
    if isinstance(e, Integral):
        return f"integral({to_string(e.body)}, {e.var})"
    raise TypeError(type(e))
