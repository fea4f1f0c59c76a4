"""b-forms and b-vector fields on a chart.

A b-form is stored in the b-coframe: for every chart coordinate ``z`` the
basis one-form is ``dz``, except for the defining coordinate ``a`` where it
is ``da/a``.  A smooth ``da`` is therefore represented as ``a * (da/a)``.
Terms are keyed by sorted tuples of coordinate indices.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as E
from .charts import Chart, CoordinateMap, equivalence_witness
from .expr import Expr
from .parsing import parse

DET_TOL = 1e-9


class FormError(ValueError):
    pass


class ChartMismatchError(FormError):
    pass


class PullbackError(FormError):
    pass


def _merge_sign(left: tuple, right: tuple) -> tuple[int, tuple] | None:
    if set(left) & set(right):
        return None
    inversions = sum(1 for i in left for j in right if i > j)
    return (-1) ** inversions, tuple(sorted(left + right))


@dataclass(frozen=True)
class BForm:
    chart: Chart
    degree: int
    terms: tuple  # ((index tuple, coefficient), ...) sorted, nonzero

    def __post_init__(self):
        items = dict(self.terms) if not isinstance(self.terms, dict) else self.terms
        clean = []
        for key, c in items.items():
            key = tuple(key)
            if len(key) != self.degree:
                raise FormError(f"term {key} has wrong degree for a {self.degree}-form")
            if list(key) != sorted(set(key)):
                raise FormError(f"term key {key} must be strictly increasing")
            c = E.normalize(E.as_expr(c))
            if c != E.ZERO:
                clean.append((key, c))
        clean.sort(key=lambda kc: kc[0])
        object.__setattr__(self, "terms", tuple(clean))

    # -- construction --------------------------------------------------------

    @classmethod
    def build(cls, chart: Chart, degree: int, terms: Mapping[tuple, Expr] | Iterable) -> "BForm":
        """Build from possibly unsorted keys, accumulating signs."""
        acc: dict[tuple, list] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for key, c in items:
            key = tuple(chart.index(k) if isinstance(k, str) else k for k in key)
            if len(set(key)) != len(key):
                continue
            perm = sorted(range(len(key)), key=lambda i: key[i])
            sign = _perm_sign(perm)
            skey = tuple(sorted(key))
            acc.setdefault(skey, []).append(E.mul(E.Const(sign), E.as_expr(c)))
        return cls(chart, degree, {k: E.add(*v) for k, v in acc.items()})

    @classmethod
    def zero(cls, chart: Chart, degree: int) -> "BForm":
        return cls(chart, degree, ())

    @classmethod
    def function(cls, chart: Chart, f) -> "BForm":
        return cls(chart, 0, {(): E.as_expr(f)})

    @classmethod
    def frame(cls, chart: Chart, name: str, coeff=E.ONE) -> "BForm":
        """The b-coframe element for ``name`` (``da/a`` for the defining one)."""
        return cls(chart, 1, {(chart.index(name),): E.as_expr(coeff)})

    @classmethod
    def differential(cls, chart: Chart, name: str) -> "BForm":
        """The smooth differential ``d name``."""
        if name == chart.defining_coordinate:
            return cls.frame(chart, name, E.Var(name))
        return cls.frame(chart, name)

    # -- access --------------------------------------------------------------

    @property
    def term_dict(self) -> dict[tuple, Expr]:
        return dict(self.terms)

    def coefficient(self, key: Sequence) -> Expr:
        key = tuple(self.chart.index(k) if isinstance(k, str) else k for k in key)
        perm = sorted(range(len(key)), key=lambda i: key[i])
        skey = tuple(sorted(key))
        if len(set(key)) != len(key):
            return E.ZERO
        c = self.term_dict.get(skey, E.ZERO)
        return E.mul(E.Const(_perm_sign(perm)), c)

    def is_zero(self) -> bool:
        return not self.terms

    def _check(self, other: "BForm"):
        if self.chart != other.chart:
            raise ChartMismatchError("forms live on different charts")

    def __add__(self, other: "BForm") -> "BForm":
        self._check(other)
        if self.degree != other.degree:
            raise FormError("cannot add forms of different degree")
        d = self.term_dict
        for k, c in other.terms:
            d[k] = E.add(d.get(k, E.ZERO), c)
        return BForm(self.chart, self.degree, d)

    def __neg__(self) -> "BForm":
        return self.scale(E.MINUS_ONE)

    def __sub__(self, other: "BForm") -> "BForm":
        return self + (-other)

    def scale(self, f) -> "BForm":
        f = E.as_expr(f)
        return BForm(self.chart, self.degree, {k: E.mul(f, c) for k, c in self.terms})

    def map_coefficients(self, fn) -> "BForm":
        return BForm(self.chart, self.degree, {k: fn(c) for k, c in self.terms})

    def __xor__(self, other: "BForm") -> "BForm":
        return wedge(self, other)

    def singular_part(self) -> "BForm":
        a = self.chart.defining_index
        return BForm(self.chart, self.degree, {k: c for k, c in self.terms if a in k})

    def smooth_part(self) -> "BForm":
        a = self.chart.defining_index
        return BForm(self.chart, self.degree, {k: c for k, c in self.terms if a not in k})

    def __str__(self) -> str:
        return " + ".join(self.term_strings()) or "0"

    def term_strings(self) -> list[str]:
        out = []
        for key, c in self.terms:
            diffs = " ^ ".join(_frame_name(self.chart, i) for i in key)
            if not key:
                out.append(E.to_string(c))
            elif c == E.ONE:
                out.append(diffs)
            else:
                cs = E.to_string(c)
                if isinstance(c, E.Add):
                    cs = f"({cs})"
                out.append(f"{cs} * {diffs}")
        return out


def _frame_name(chart: Chart, i: int) -> str:
    n = chart.names[i]
    return f"dlog({n})" if n == chart.defining_coordinate else f"d{n}"


def _perm_sign(perm: Sequence[int]) -> int:
    sign = 1
    p = list(perm)
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_DIFF = r"(?:dlog\(\s*[A-Za-z_]\w*\s*\)|d[A-Za-z_]\w*)"
_WEDGE = re.compile(rf"^\s*{_DIFF}(?:\s*\^\s*{_DIFF})*\s*$")


def _split_top(text: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def parse_term(text: str, chart: Chart, constants=None) -> BForm:
    """Parse one term ``coeff * d<x> ^ d<y> ...`` (``dlog(a)`` for da/a)."""
    pieces = _split_top(text, "*")
    wedge_txt = pieces[-1]
    if not _WEDGE.match(wedge_txt):
        if len(pieces) == 1:
            return BForm.function(chart, parse(text, chart, constants=constants))
        raise FormError(f"term {text.strip()!r} does not end in a wedge of differentials")
    coeff_txt = "*".join(pieces[:-1]).strip() or "1"
    coeff = parse(coeff_txt, chart, constants=constants)
    out = BForm.function(chart, coeff)
    for tok in (t.strip() for t in wedge_txt.split("^")):
        if tok.startswith("dlog("):
            name = tok[5:-1].strip()
            if name != chart.defining_coordinate:
                raise FormError(f"dlog({name}) requires {name} to be the defining coordinate")
            piece = BForm.frame(chart, name)
        else:
            name = tok[1:]
            if name not in chart:
                raise FormError(f"unknown differential {tok!r}")
            piece = BForm.differential(chart, name)
        out = wedge(out, piece)
    return out


def parse_form(terms: Iterable[str], chart: Chart, constants=None) -> BForm:
    terms = list(terms)
    if not terms:
        raise FormError("a form needs at least one term")
    forms = [parse_term(t, chart, constants) for t in terms]
    out = forms[0]
    for f in forms[1:]:
        out = out + f
    return out


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------


def wedge(u: BForm, v: BForm) -> BForm:
    u._check(v)
    acc: dict[tuple, list] = {}
    for ku, cu in u.terms:
        for kv, cv in v.terms:
            m = _merge_sign(ku, kv)
            if m is None:
                continue
            sign, key = m
            acc.setdefault(key, []).append(E.mul(E.Const(sign), cu, cv))
    return BForm(u.chart, u.degree + v.degree, {k: E.add(*cs) for k, cs in acc.items()})


def frame_derivative(f: Expr, chart: Chart, i: int) -> Expr:
    """Derivative of ``f`` along the i-th b-frame vector (``a d/da`` for the defining one)."""
    name = chart.names[i]
    df = E.differentiate(f, name)
    if i == chart.defining_index:
        return E.mul(E.Var(name), df)
    return df


def d_function(f: Expr, chart: Chart) -> BForm:
    return BForm(chart, 1, {(i,): frame_derivative(f, chart, i) for i in range(chart.dim)})


def exterior_derivative(w: BForm) -> BForm:
    """``d(alpha ^ da/a + beta) = d alpha ^ da/a + d beta`` in the b-coframe."""
    acc: dict[tuple, list] = {}
    for key, c in w.terms:
        for i in range(w.chart.dim):
            if i in key:
                continue
            dc = frame_derivative(c, w.chart, i)
            if dc == E.ZERO:
                continue
            sign, k = _merge_sign((i,), key)
            acc.setdefault(k, []).append(E.mul(E.Const(sign), dc))
    return BForm(w.chart, w.degree + 1, {k: E.add(*cs) for k, cs in acc.items()})


@dataclass(frozen=True)
class BVectorField:
    """Coefficients in the b-frame ``(d/dz_1, ..., a d/da, ...)``, one per chart coordinate."""

    chart: Chart
    coefficients: tuple

    def __post_init__(self):
        cs = tuple(E.normalize(E.as_expr(c)) for c in self.coefficients)
        if len(cs) != self.chart.dim:
            raise FormError("b-vector field needs one coefficient per coordinate")
        object.__setattr__(self, "coefficients", cs)

    @classmethod
    def from_mapping(cls, chart: Chart, mapping: Mapping[str, object]) -> "BVectorField":
        return cls(chart, tuple(E.as_expr(mapping.get(n, 0)) for n in chart.names))

    def ordinary_components(self) -> tuple[Expr, ...]:
        """Components in the coordinate frame ``d/dz``."""
        out = list(self.coefficients)
        a = self.chart.defining_index
        if a is not None:
            out[a] = E.mul(E.Var(self.chart.names[a]), out[a])
        return tuple(out)

    def __str__(self) -> str:
        parts = []
        for n, c in zip(self.chart.names, self.coefficients):
            if c == E.ZERO:
                continue
            frame = f"{n}*d/d{n}" if n == self.chart.defining_coordinate else f"d/d{n}"
            parts.append(f"({E.to_string(c)}) {frame}")
        return " + ".join(parts) or "0"


def interior_product(X: BVectorField, w: BForm) -> BForm:
    if X.chart != w.chart:
        raise ChartMismatchError("vector field and form on different charts")
    if w.degree == 0:
        raise FormError("interior product of a 0-form")
    acc: dict[tuple, list] = {}
    for key, c in w.terms:
        for r, i in enumerate(key):
            xi = X.coefficients[i]
            if xi == E.ZERO:
                continue
            k = key[:r] + key[r + 1 :]
            acc.setdefault(k, []).append(E.mul(E.Const((-1) ** r), xi, c))
    return BForm(w.chart, w.degree - 1, {k: E.add(*cs) for k, cs in acc.items()})


def decompose(w: BForm) -> tuple[BForm, BForm]:
    """Split ``w = alpha ^ da/a + beta`` with alpha and beta free of da/a."""
    a = w.chart.defining_index
    if a is None:
        return BForm.zero(w.chart, max(w.degree - 1, 0)), w
    alpha, beta = {}, {}
    for key, c in w.terms:
        if a in key:
            pos = key.index(a)
            sign = (-1) ** (len(key) - 1 - pos)
            alpha[key[:pos] + key[pos + 1 :]] = E.mul(E.Const(sign), c)
        else:
            beta[key] = c
    return BForm(w.chart, w.degree - 1, alpha), BForm(w.chart, w.degree, beta)


# ---------------------------------------------------------------------------
# pullback
# ---------------------------------------------------------------------------


def _defining_factor(F: CoordinateMap, comp: Expr) -> Expr:
    src_a = F.source.defining_coordinate
    if src_a is None:
        raise PullbackError(
            "map sends points to the critical hypersurface but its source has no defining coordinate"
        )
    u = E.mul(comp, E.power(E.Var(src_a), -1))
    # u must be smooth and non-vanishing on the source hypersurface
    rng = np.random.default_rng(0)
    env = F.source.sample(rng, 64, fixed={src_a: 0.0})
    vals = E.evaluate_limit(u, env, src_a)
    if not np.all(np.isfinite(vals)) or np.any(np.abs(vals) < 1e-12):
        raise PullbackError(
            f"defining component {E.to_string(comp)} is not {src_a} times a non-vanishing "
            "factor; da/a would pull back to a pole not of da/a type"
        )
    if np.any(vals > 0) and np.any(vals < 0):
        raise PullbackError(f"factor {E.to_string(u)} changes sign on the hypersurface")
    return u


def pullback_frame(F: CoordinateMap) -> list[BForm]:
    """Pullbacks of the target b-coframe, as b-forms on the source."""
    src = F.source
    out = []
    tgt_a = F.target.defining_coordinate
    for name, comp in zip(F.target.names, F.components):
        if name == tgt_a:
            src_a = src.defining_coordinate
            if src_a is not None and comp == E.Var(src_a):
                out.append(BForm.frame(src, src_a))
                continue
            u = _defining_factor(F, comp)
            dlog_u = d_function(u, src).scale(E.power(u, -1))
            out.append(BForm.frame(src, src.defining_coordinate) + dlog_u)
        else:
            out.append(d_function(comp, src))
    return out


def pullback(F: CoordinateMap, w: BForm) -> BForm:
    if F.target != w.chart:
        raise ChartMismatchError("map target differs from the form's chart")
    frames = pullback_frame(F)
    sub = F.as_substitution()
    out = BForm.zero(F.source, w.degree)
    for key, c in w.terms:
        piece = BForm.function(F.source, E.substitute(c, sub))
        for i in key:
            piece = wedge(piece, frames[i])
        out = out + piece
    return out


# ---------------------------------------------------------------------------
# numerics
# ---------------------------------------------------------------------------


def coefficient_arrays(w: BForm, env: Mapping[str, np.ndarray]) -> dict[tuple, np.ndarray]:
    """Coefficient values, removable singularities in the defining coordinate filled."""
    a = w.chart.defining_coordinate
    shape = np.broadcast(*env.values()).shape
    out = {}
    for key, c in w.terms:
        if a is not None:
            v = E.evaluate_limit(c, env, a)
        else:
            v = E.evaluate_array(c, env)
        out[key] = np.broadcast_to(v, shape)
    return out


def form_matrix(w: BForm, env: Mapping[str, np.ndarray]) -> np.ndarray:
    """Matrix of a 2-form in the b-frame, shape (npoints, n, n)."""
    if w.degree != 2:
        raise FormError("form_matrix needs a 2-form")
    n = w.chart.dim
    shape = np.broadcast(*env.values()).shape
    m = np.zeros(shape + (n, n))
    for (i, j), v in coefficient_arrays(w, env).items():
        m[..., i, j] = v
        m[..., j, i] = -v
    return m


def one_form_array(w: BForm, env: Mapping[str, np.ndarray]) -> np.ndarray:
    if w.degree != 1:
        raise FormError("one_form_array needs a 1-form")
    shape = np.broadcast(*env.values()).shape
    out = np.zeros(shape + (w.chart.dim,))
    for (i,), v in coefficient_arrays(w, env).items():
        out[..., i] = v
    return out


def vector_array(X: BVectorField, env: Mapping[str, np.ndarray]) -> np.ndarray:
    shape = np.broadcast(*env.values()).shape
    out = np.zeros(shape + (X.chart.dim,))
    a = X.chart.defining_coordinate
    for i, c in enumerate(X.coefficients):
        v = E.evaluate_limit(c, env, a) if a else E.evaluate_array(c, env)
        out[..., i] = v
    return out


def forms_witness(u: BForm, v: BForm, seed: int = 0, **kw) -> dict | None:
    """First coefficient where ``u`` and ``v`` differ, or None."""
    u._check(v)
    if u.degree != v.degree:
        return {"reason": "degree mismatch"}
    du, dv = u.term_dict, v.term_dict
    for key in sorted(set(du) | set(dv)):
        a, b = du.get(key, E.ZERO), dv.get(key, E.ZERO)
        if a == b:
            continue
        w = equivalence_witness(a, b, u.chart, seed=seed, **kw)
        if w is not None:
            w["term"] = " ^ ".join(_frame_name(u.chart, i) for i in key)
            return w
    return None


def forms_equivalent(u: BForm, v: BForm, seed: int = 0, **kw) -> bool:
    return forms_witness(u, v, seed, **kw) is None


@dataclass(frozen=True)
class BSymplecticReport:
    closed: bool
    nondegenerate: bool
    witness: dict | None = None

    @property
    def ok(self) -> bool:
        return self.closed and self.nondegenerate

    def to_dict(self) -> dict:
        return {"closed": self.closed, "nondegenerate": self.nondegenerate, "witness": self.witness}


def is_b_symplectic(w: BForm, seed: int = 0, samples: int = 128, tol: float = DET_TOL) -> BSymplecticReport:
    """Closedness (symbolic d, sampled comparison) and sampled nondegeneracy.

    Half of the sample points lie on the critical hypersurface; a quarter of
    the remaining coordinates are snapped to their distinguished value 0.
    """
    if w.degree != 2:
        raise FormError("is_b_symplectic needs a 2-form")
    if w.chart.dim % 2:
        raise FormError("odd-dimensional chart cannot carry a b-symplectic form")
    dw = exterior_derivative(w)
    witness = forms_witness(dw, BForm.zero(w.chart, 3), seed=seed)
    closed = witness is None
    if witness is not None:
        witness = {"check": "closed", **witness}
    rng = np.random.default_rng(seed)
    a = w.chart.defining_coordinate
    half = samples // 2
    env = w.chart.sample(rng, samples, special_fraction=0.25)
    if a is not None:
        env[a][:half] = 0.0
    m = form_matrix(w, env)
    finite = np.all(np.isfinite(m), axis=(-1, -2))
    det = np.full(samples, np.nan)
    det[finite] = np.linalg.det(m[finite])
    bad = ~finite | (np.abs(det) <= tol)
    nondegenerate = not bad.any()
    if bad.any() and witness is None:
        i = int(np.argmax(bad))
        witness = {
            "check": "nondegenerate",
            "point": {k: float(v[i]) for k, v in env.items()},
            "det": None if not np.isfinite(det[i]) else float(det[i]),
        }
    return BSymplecticReport(closed, nondegenerate, witness)
