"""Line-oriented scenario files.

Sections are ``[kind name]`` headers followed by ``key = value`` lines;
``#`` starts a comment.  Repeated ``term`` / ``beta`` keys accumulate.

    [chart leaf]          coordinate = angle(P) | real(lo, hi) | defining(r)
    [torus Z]             leaf, beta, monodromy, period, order, time, defining,
                          epsilon, compact, simply_connected
    [form omega]          on = <torus> | chart = <chart>; term = coeff * dx ^ dlog(a)
    [action G]            torus, circle.<coord> = expr in s, base_degree,
                          factor = trivial | cyclic(n) | torus(q, ...) |
                          so3_diag(th1, h1; th2, h2), generator.<coord> = expr
    [symmetry S]          chart | on, kind = finite | circle, order, map.<coord> = expr
    [functions F]         f = expr (repeated)
    [anchor p]            <coord> = number
    [task]                form, action, omega0, omega1, anchor, symmetry, seed,
                          steps, samples, certify
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from . import expr as E
from .actions import (
    CircleAction,
    CyclicAction,
    GroupAction,
    SO3DiagonalAction,
    TorusTranslationAction,
    TrivialAction,
)
from .bcalc import BForm, parse_form
from .charts import Chart, Coordinate, CoordinateMap, matrix_map
from .parsing import parse
from .torus import MappingTorus

SECTION_KINDS = ("chart", "torus", "form", "action", "symmetry", "functions", "anchor", "task")
REPEATABLE = ("term", "beta", "f")


class ScenarioError(ValueError):
    """Parse or reference error, carrying a 1-based line number."""

    def __init__(self, message: str, line: int | None = None, source: str = "<scenario>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + message)


@dataclass
class _Section:
    kind: str
    name: str
    line: int
    entries: list = field(default_factory=list)

    def get(self, key: str, default=None):
        for k, v, _ in self.entries:
            if k == key:
                return v
        return default

    def line_of(self, key: str) -> int:
        for k, _, ln in self.entries:
            if k == key:
                return ln
        return self.line

    def all(self, key: str) -> list[tuple[str, int]]:
        return [(v, ln) for k, v, ln in self.entries if k == key]

    def prefixed(self, prefix: str) -> list[tuple[str, str, int]]:
        return [(k[len(prefix) :], v, ln) for k, v, ln in self.entries if k.startswith(prefix)]


_HEADER = re.compile(r"^\[\s*([a-z_]+)(?:\s+([A-Za-z_][A-Za-z_0-9]*))?\s*\]$")


def _split_sections(text: str, source: str) -> list[_Section]:
    out: list[_Section] = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            kind, name = m.group(1), m.group(2) or ""
            if kind not in SECTION_KINDS:
                raise ScenarioError(f"unknown section kind {kind!r}", ln, source)
            if kind != "task" and not name:
                raise ScenarioError(f"section [{kind}] needs a name", ln, source)
            out.append(_Section(kind, name, ln))
            continue
        if not out:
            raise ScenarioError("content before the first section header", ln, source)
        if "=" not in line:
            raise ScenarioError(f"expected 'key = value', found {line!r}", ln, source)
        key, value = (s.strip() for s in line.split("=", 1))
        sec = out[-1]
        if key not in REPEATABLE and sec.get(key) is not None:
            raise ScenarioError(f"duplicate key {key!r}", ln, source)
        sec.entries.append((key, value, ln))
    return out


_COORD = re.compile(r"^(angle|real|defining)\s*(?:\((.*)\))?$")


def _number(text: str, ln: int, source: str) -> float:
    t = text.strip()
    if t in ("inf", "+inf"):
        return math.inf
    if t == "-inf":
        return -math.inf
    try:
        return float(E.evaluate(parse(t, ()), {}))
    except E.ExprError as exc:
        raise ScenarioError(f"bad number {t!r}: {exc}", ln, source) from exc


def _coordinate(name: str, spec: str, ln: int, source: str) -> Coordinate:
    m = _COORD.match(spec.strip())
    if not m:
        raise ScenarioError(f"bad coordinate spec {spec!r}", ln, source)
    kind, args = m.group(1), [a for a in (m.group(2) or "").split(",") if a.strip()]
    try:
        if kind == "angle":
            period = parse(args[0], ()) if args else E.ONE
            if not isinstance(period, E.Const):
                raise ScenarioError("angle period must be constant", ln, source)
            return Coordinate.angle(name, period)
        if kind == "real":
            lo, hi = (_number(a, ln, source) for a in args) if args else (-math.inf, math.inf)
            return Coordinate.real(name, lo, hi)
        return Coordinate.defining(name, _number(args[0], ln, source) if args else 1.0)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc), ln, source) from exc


def _bool(text: str | None, default: bool) -> bool:
    if text is None:
        return default
    return text.strip().lower() in ("1", "true", "yes", "on")


@dataclass
class Scenario:
    charts: dict
    tori: dict
    forms: dict
    actions: dict
    symmetries: dict
    functions: dict
    anchors: dict
    task: dict
    source: str = "<scenario>"
    text: str = ""

    @property
    def seed(self) -> int:
        return int(self.task.get("seed", 0))

    def form(self, name: str | None = None) -> BForm:
        name = name or self.task.get("form")
        if name is None:
            if len(self.forms) != 1:
                raise ScenarioError("no form selected in [task]", None, self.source)
            name = next(iter(self.forms))
        if name not in self.forms:
            raise ScenarioError(f"unknown form {name!r}", None, self.source)
        return self.forms[name]

    def action(self, name: str | None = None) -> GroupAction | None:
        name = name or self.task.get("action")
        if name is None:
            return next(iter(self.actions.values()), None)
        if name not in self.actions:
            raise ScenarioError(f"unknown action {name!r}", None, self.source)
        return self.actions[name]


def _parse_expr(text: str, chart, ln: int, source: str, extra=()) -> E.Expr:
    try:
        return parse(text, chart, extra)
    except E.ParseError as exc:
        raise ScenarioError(f"{exc} (column {exc.position + 1})", ln, source) from exc


def _parse_terms(items: Iterable[tuple[str, int]], chart: Chart, source: str) -> BForm:
    total = None
    for text, ln in items:
        try:
            f = parse_form([text], chart)
        except E.ParseError as exc:
            raise ScenarioError(f"{exc} (column {exc.position + 1})", ln, source) from exc
        except ValueError as exc:
            raise ScenarioError(str(exc), ln, source) from exc
        total = f if total is None else total + f
    return total


_MATRIX = re.compile(r"^matrix\s*\(([^:]*):(.*)\)$")


def _map_from(sec: _Section, prefix: str, chart: Chart, source: str, extra=()) -> dict:
    comps = {}
    for coord, text, ln in sec.prefixed(prefix):
        if coord not in chart:
            raise ScenarioError(f"unknown coordinate {coord!r}", ln, source)
        comps[coord] = _parse_expr(text, chart, ln, source, extra)
    return comps


def _torus(sec: _Section, charts: dict, source: str) -> MappingTorus:
    leaf_name = sec.get("leaf")
    if leaf_name not in charts:
        raise ScenarioError(f"unknown leaf chart {leaf_name!r}", sec.line_of("leaf"), source)
    leaf = charts[leaf_name]
    if leaf.defining_coordinate is not None:
        raise ScenarioError("leaf chart must not have a defining coordinate", sec.line_of("leaf"), source)
    beta = _parse_terms(sec.all("beta"), leaf, source)
    if beta is None:
        raise ScenarioError("torus needs beta terms", sec.line, source)
    mono_text = sec.get("monodromy")
    try:
        if mono_text is not None:
            m = _MATRIX.match(mono_text)
            if not m:
                raise ScenarioError("monodromy must be matrix(names: rows)", sec.line_of("monodromy"), source)
            names = [n.strip() for n in m.group(1).split(",")]
            rows = [[Fraction(x.strip()) for x in r.split(",")] for r in m.group(2).split(";")]
            mono = matrix_map(leaf, names, rows)
        else:
            comps = _map_from(sec, "monodromy.", leaf, source)
            mono = CoordinateMap.from_mapping(leaf, leaf, comps)
        return MappingTorus(
            leaf,
            beta,
            mono,
            Fraction(sec.get("period", "1")),
            int(sec.get("order", "1")),
            time=sec.get("time", "t"),
            defining=sec.get("defining", "a"),
            epsilon=float(sec.get("epsilon", "1")),
            compact=_bool(sec.get("compact"), True),
            simply_connected=_bool(sec.get("simply_connected"), False),
        )
    except ScenarioError:
        raise
    except (ValueError, ZeroDivisionError) as exc:
        raise ScenarioError(str(exc), sec.line, source) from exc


_FACTOR = re.compile(r"^(trivial|cyclic|torus|so3_diag)\s*(?:\((.*)\))?$")


def _action(sec: _Section, tori: dict, source: str) -> GroupAction:
    tname = sec.get("torus")
    if tname not in tori:
        raise ScenarioError(f"unknown torus {tname!r}", sec.line_of("torus"), source)
    torus = tori[tname]
    ch = torus.collar_chart
    comps = _map_from(sec, "circle.", ch, source, extra=("s",))
    try:
        circle = CircleAction(ch, comps, time=torus.time)
        declared = sec.get("base_degree")
        if declared is not None and int(declared) != circle.base_degree:
            raise ScenarioError(
                f"declared base_degree {declared} but the circle winds {circle.base_degree} times",
                sec.line_of("base_degree"),
                source,
            )
        m = _FACTOR.match(sec.get("factor", "trivial").strip())
        if not m:
            raise ScenarioError("unknown factor", sec.line_of("factor"), source)
        kind, args = m.group(1), m.group(2) or ""
        leaf = torus.leaf_chart
        if kind == "trivial":
            factor = TrivialAction(leaf)
        elif kind == "cyclic":
            gen = CoordinateMap.from_mapping(leaf, leaf, _map_from(sec, "generator.", leaf, source))
            factor = CyclicAction(gen, int(args))
        elif kind == "torus":
            factor = TorusTranslationAction(leaf, [a.strip() for a in args.split(",")])
        else:
            blocks = [tuple(x.strip() for x in b.split(",")) for b in args.split(";")]
            factor = SO3DiagonalAction(leaf, blocks)
        return GroupAction(torus, circle, factor)
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(str(exc), sec.line, source) from exc


def _chart_ref(sec: _Section, charts: dict, tori: dict, source: str) -> Chart:
    if sec.get("on") is not None:
        t = sec.get("on")
        if t not in tori:
            raise ScenarioError(f"unknown torus {t!r}", sec.line_of("on"), source)
        return tori[t].collar_chart
    c = sec.get("chart")
    if c not in charts:
        raise ScenarioError(f"unknown chart {c!r}", sec.line_of("chart"), source)
    return charts[c]


def loads(text: str, source: str = "<scenario>") -> Scenario:
    sections = _split_sections(text, source)
    charts, tori, forms, actions, syms, funcs, anchors, task = {}, {}, {}, {}, {}, {}, {}, {}
    seen = set()
    for sec in sections:
        key = (sec.kind, sec.name)
        if key in seen:
            raise ScenarioError(f"duplicate section [{sec.kind} {sec.name}]", sec.line, source)
        seen.add(key)
    for sec in sections:
        if sec.kind == "chart":
            coords = tuple(_coordinate(k, v, ln, source) for k, v, ln in sec.entries)
            try:
                charts[sec.name] = Chart(coords)
            except ValueError as exc:
                raise ScenarioError(str(exc), sec.line, source) from exc
    for sec in sections:
        if sec.kind == "torus":
            tori[sec.name] = _torus(sec, charts, source)
    for sec in sections:
        if sec.kind == "form":
            ch = _chart_ref(sec, charts, tori, source)
            f = _parse_terms(sec.all("term"), ch, source)
            forms[sec.name] = f if f is not None else BForm.zero(ch, 2)
        elif sec.kind == "action":
            actions[sec.name] = _action(sec, tori, source)
        elif sec.kind == "symmetry":
            ch = _chart_ref(sec, charts, tori, source)
            kind = sec.get("kind", "finite")
            comps = _map_from(sec, "map.", ch, source, extra=("s",) if kind == "circle" else ())
            syms[sec.name] = Symmetry(ch, kind, comps, int(sec.get("order", "0") or 0))
        elif sec.kind == "functions":
            names = set().union(*(c.names for c in charts.values())) if charts else set()
            for t in tori.values():
                names |= set(t.collar_chart.names)
            funcs[sec.name] = [(text, _parse_expr(text, names, ln, source)) for text, ln in sec.all("f")]
        elif sec.kind == "anchor":
            anchors[sec.name] = {k: _number(v, ln, source) for k, v, ln in sec.entries}
        elif sec.kind == "task":
            task = {k: v for k, v, _ in sec.entries}
    return Scenario(charts, tori, forms, actions, syms, funcs, anchors, task, source, text)


def load(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), source=path)


@dataclass
class Symmetry:
    """A finite cyclic group (generator and order) or a circle in ``s``."""

    chart: Chart
    kind: str
    components: dict
    order: int = 0

    def elements(self) -> list[CoordinateMap]:
        from .charts import map_power
        from .moser import circle_elements

        if self.kind == "circle":
            return circle_elements(self.at)
        gen = CoordinateMap.from_mapping(self.chart, self.chart, self.components)
        if self.order < 1:
            raise ScenarioError("finite symmetry needs a positive order")
        return [map_power(gen, m) for m in range(self.order)]

    def at(self, s: E.Expr) -> CoordinateMap:
        sub = {"s": s}
        return CoordinateMap.from_mapping(
            self.chart, self.chart, {k: E.substitute(v, sub) for k, v in self.components.items()}
        )
