"""Coordinates, charts, coordinate maps, and sampling-based equivalence."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as E
from .expr import Const, Expr

ANGLE = "angle"
REAL = "real"
DEFINING = "defining"

UNBOUNDED_SPAN = 2.0


class ChartError(ValueError):
    pass


@dataclass(frozen=True)
class Coordinate:
    """A chart coordinate.

    ``angle`` coordinates carry an exact period (rational or rational
    multiple of pi); ``real`` and ``defining`` coordinates carry an open
    interval.  A defining interval must contain 0.
    """

    name: str
    kind: str = REAL
    period: Const | None = None
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ChartError(f"invalid coordinate name {self.name!r}")
        if self.kind == ANGLE:
            if self.period is None or float(self.period) <= 0:
                raise ChartError(f"angle coordinate {self.name} needs a positive period")
        elif self.kind in (REAL, DEFINING):
            if not self.lo < self.hi:
                raise ChartError(f"empty interval for {self.name}")
            if self.kind == DEFINING and not self.lo < 0 < self.hi:
                raise ChartError(f"defining interval for {self.name} must contain 0")
        else:
            raise ChartError(f"unknown coordinate kind {self.kind!r}")

    @classmethod
    def angle(cls, name: str, period=1) -> "Coordinate":
        p = period if isinstance(period, Const) else Const(Fraction(period))
        return cls(name, ANGLE, period=p)

    @classmethod
    def real(cls, name: str, lo: float = -math.inf, hi: float = math.inf) -> "Coordinate":
        return cls(name, REAL, lo=lo, hi=hi)

    @classmethod
    def defining(cls, name: str, radius: float = 1.0) -> "Coordinate":
        return cls(name, DEFINING, lo=-radius, hi=radius)

    @property
    def period_value(self) -> float:
        return float(self.period) if self.period is not None else math.inf

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == ANGLE:
            return rng.uniform(0.0, self.period_value, n)
        lo, hi = self.lo, self.hi
        if math.isinf(lo) and math.isinf(hi):
            lo, hi = -UNBOUNDED_SPAN, UNBOUNDED_SPAN
        elif math.isinf(hi):
            lo, hi = lo + 0.05, lo + UNBOUNDED_SPAN + 1.0
        elif math.isinf(lo):
            lo, hi = hi - UNBOUNDED_SPAN - 1.0, hi - 0.05
        else:
            pad = 1e-3 * (hi - lo)
            lo, hi = lo + pad, hi - pad
        return rng.uniform(lo, hi, n)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == ANGLE:
            return np.isfinite(x)
        return (x > self.lo) & (x < self.hi)

    def special_values(self) -> list[float]:
        """Distinguished values worth hitting exactly when sampling."""
        if self.kind == ANGLE:
            return [0.0]
        return [0.0] if self.lo < 0 < self.hi else []

    def describe(self) -> str:
        if self.kind == ANGLE:
            return f"angle({E.to_string(self.period)})"
        return f"{self.kind}({_fmt_bound(self.lo)}, {_fmt_bound(self.hi)})"


def _fmt_bound(x: float) -> str:
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return repr(float(x))


@dataclass(frozen=True)
class Chart:
    coordinates: tuple[Coordinate, ...]
    defining_coordinate: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "coordinates", tuple(self.coordinates))
        names = [c.name for c in self.coordinates]
        if len(set(names)) != len(names):
            raise ChartError(f"duplicate coordinate names in {names}")
        if self.defining_coordinate is None:
            defs = [c.name for c in self.coordinates if c.kind == DEFINING]
            if len(defs) > 1:
                raise ChartError("more than one defining coordinate")
            if defs:
                object.__setattr__(self, "defining_coordinate", defs[0])
        elif self.coordinate(self.defining_coordinate).kind != DEFINING:
            raise ChartError(f"{self.defining_coordinate} is not a defining coordinate")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.coordinates)

    @property
    def dim(self) -> int:
        return len(self.coordinates)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ChartError(f"no coordinate {name!r} in chart {self.names}") from None

    def coordinate(self, name: str) -> Coordinate:
        return self.coordinates[self.index(name)]

    def __contains__(self, name: str) -> bool:
        return name in self.names

    @property
    def defining_index(self) -> int | None:
        if self.defining_coordinate is None:
            return None
        return self.index(self.defining_coordinate)

    def sample(
        self,
        rng: np.random.Generator,
        n: int,
        fixed: Mapping[str, float] | None = None,
        special_fraction: float = 0.0,
    ) -> dict[str, np.ndarray]:
        """Draw ``n`` points; a ``special_fraction`` of coordinates snap to 0."""
        out = {}
        for c in self.coordinates:
            x = c.sample(rng, n)
            sv = c.special_values()
            if special_fraction > 0 and sv:
                snap = rng.random(n) < special_fraction
                x = np.where(snap, sv[0], x)
            out[c.name] = x
        for k, v in (fixed or {}).items():
            out[k] = np.full(n, float(v))
        return out

    def wrap(self, point: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for c in self.coordinates:
            x = np.asarray(point[c.name], dtype=float)
            if c.kind == ANGLE:
                x = np.mod(x, c.period_value)
            out[c.name] = x
        return out

    def distance(self, p: Mapping[str, np.ndarray], q: Mapping[str, np.ndarray]) -> np.ndarray:
        """Max-norm distance, measuring angles modulo their periods."""
        d = 0.0
        for c in self.coordinates:
            diff = np.asarray(p[c.name], dtype=float) - np.asarray(q[c.name], dtype=float)
            if c.kind == ANGLE:
                P = c.period_value
                diff = diff - P * np.round(diff / P)
            d = np.maximum(d, np.abs(diff))
        return d

    def restrict(self, names: Sequence[str]) -> "Chart":
        return Chart(tuple(self.coordinate(n) for n in names))


def equivalent(
    e1: Expr,
    e2: Expr,
    chart: Chart,
    seed: int = 0,
    samples: int = E.EQUIV_SAMPLES,
    rtol: float = E.EQUIV_RTOL,
    fixed: Mapping[str, float] | None = None,
) -> bool:
    """Probabilistic equality of two expressions on ``chart``.

    Structural equality short-circuits.  Otherwise both sides are compared at
    ``samples`` seeded points where both are finite.
    """
    e1, e2 = E.normalize(E.as_expr(e1)), E.normalize(E.as_expr(e2))
    if e1 == e2:
        return True
    return equivalence_witness(e1, e2, chart, seed, samples, rtol, fixed) is None


def equivalence_witness(
    e1: Expr,
    e2: Expr,
    chart: Chart,
    seed: int = 0,
    samples: int = E.EQUIV_SAMPLES,
    rtol: float = E.EQUIV_RTOL,
    fixed: Mapping[str, float] | None = None,
) -> dict | None:
    """Return a failing sample point, or None when the expressions agree."""
    unknown = (E.free_vars(e1) | E.free_vars(e2)) - set(chart.names)
    if unknown:
        raise E.ExprError(f"variables {sorted(unknown)} not in chart")
    rng = np.random.default_rng(seed)
    v1s, v2s, pts = [], [], []
    found = 0
    for _ in range(32):
        env = chart.sample(rng, 4 * samples, fixed=fixed)
        a = np.broadcast_to(E.evaluate_array(e1, env), (4 * samples,))
        b = np.broadcast_to(E.evaluate_array(e2, env), (4 * samples,))
        ok = np.isfinite(a) & np.isfinite(b)
        v1s.append(a[ok])
        v2s.append(b[ok])
        pts.append({k: v[ok] for k, v in env.items()})
        found += int(ok.sum())
        if found >= samples:
            break
    if found < samples:
        raise E.SamplingError(
            f"only {found} valid sample points for {E.to_string(e1)} vs {E.to_string(e2)}"
        )
    a = np.concatenate(v1s)[:samples]
    b = np.concatenate(v2s)[:samples]
    bad = np.abs(a - b) > rtol * (1.0 + np.abs(a))
    if not bad.any():
        return None
    i = int(np.argmax(bad))
    point = {k: float(np.concatenate([p[k] for p in pts])[i]) for k in chart.names}
    return {"point": point, "lhs": float(a[i]), "rhs": float(b[i])}


def check_periodic(
    e: Expr, chart: Chart, name: str, seed: int = 0, samples: int = 32, tol: float = 1e-9
) -> bool:
    """Numerically check that ``e`` is periodic in the angle coordinate ``name``."""
    c = chart.coordinate(name)
    if c.kind != ANGLE:
        raise ChartError(f"{name} is not an angle coordinate")
    if name not in E.free_vars(e):
        return True
    rng = np.random.default_rng(seed)
    env = chart.sample(rng, 8 * samples)
    shifted = dict(env)
    shifted[name] = env[name] + c.period_value
    a = E.evaluate_array(e, env)
    b = E.evaluate_array(e, shifted)
    ok = np.isfinite(a) & np.isfinite(b)
    if ok.sum() < samples:
        raise E.SamplingError(f"too few valid points checking periodicity of {E.to_string(e)}")
    a, b = a[ok][:samples], b[ok][:samples]
    return bool(np.all(np.abs(a - b) <= tol * (1.0 + np.abs(a))))


@dataclass(frozen=True)
class CoordinateMap:
    """A map between charts given by one expression per target coordinate.

    Components are expressions in the source coordinates; components landing
    in angle coordinates are read modulo the period.
    """

    source: Chart
    target: Chart
    components: tuple[Expr, ...]

    def __post_init__(self):
        comps = tuple(E.normalize(E.as_expr(c)) for c in self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != self.target.dim:
            raise ChartError(
                f"{len(comps)} components for a {self.target.dim}-dimensional target"
            )
        extra = set().union(*(E.free_vars(c) for c in comps)) - set(self.source.names)
        if extra:
            raise ChartError(f"components use non-source variables {sorted(extra)}")

    @classmethod
    def identity(cls, chart: Chart) -> "CoordinateMap":
        return cls(chart, chart, tuple(E.Var(n) for n in chart.names))

    @classmethod
    def from_mapping(
        cls, source: Chart, target: Chart, mapping: Mapping[str, Expr]
    ) -> "CoordinateMap":
        """Components default to the same-named source coordinate."""
        comps = []
        for n in target.names:
            if n in mapping:
                comps.append(E.as_expr(mapping[n]))
            elif n in source:
                comps.append(E.Var(n))
            else:
                raise ChartError(f"no component given for {n}")
        return cls(source, target, tuple(comps))

    def component(self, name: str) -> Expr:
        return self.components[self.target.index(name)]

    def as_substitution(self) -> dict[str, Expr]:
        return dict(zip(self.target.names, self.components))

    def compose(self, inner: "CoordinateMap") -> "CoordinateMap":
        """Return ``self o inner``."""
        sub = inner.as_substitution()
        return CoordinateMap(
            inner.source, self.target, tuple(E.substitute(c, sub) for c in self.components)
        )

    def __call__(self, point: Mapping[str, np.ndarray], wrap: bool = True) -> dict:
        env = {n: np.asarray(point[n], dtype=float) for n in self.source.names}
        out = {}
        shape = np.broadcast(*env.values()).shape if env else ()
        for n, c in zip(self.target.names, self.components):
            out[n] = np.broadcast_to(E.evaluate_array(c, env), shape).copy()
        return self.target.wrap(out) if wrap else out

    def jacobian(self) -> list[list[Expr]]:
        """Symbolic Jacobian, rows = target coordinates."""
        return [[E.differentiate(c, s) for s in self.source.names] for c in self.components]

    def check_domain(self, seed: int = 0, samples: int = 32) -> bool:
        rng = np.random.default_rng(seed)
        env = self.source.sample(rng, samples)
        img = self(env, wrap=False)
        return all(bool(np.all(self.target.coordinate(n).contains(v))) for n, v in img.items())


def maps_equivalent(
    f: CoordinateMap, g: CoordinateMap, seed: int = 0, samples: int = 64, tol: float = 1e-9
) -> bool:
    """Componentwise equality of two maps, angles compared modulo period."""
    if f.target.names != g.target.names:
        return False
    if f.components == g.components:
        return True
    rng = np.random.default_rng(seed)
    env = f.source.sample(rng, samples)
    a = f(env, wrap=False)
    b = g(env, wrap=False)
    d = f.target.distance(a, b)
    scale = 1.0 + max(float(np.max(np.abs(v))) for v in a.values())
    return bool(np.all(d <= tol * scale))


def map_power(f: CoordinateMap, n: int) -> CoordinateMap:
    out = CoordinateMap.identity(f.source)
    for _ in range(n):
        out = f.compose(out)
    return out


def find_order(f: CoordinateMap, bound: int = 64, seed: int = 0) -> int | None:
    """Smallest n <= bound with f^n = id, or None."""
    ident = CoordinateMap.identity(f.source)
    g = f
    for n in range(1, bound + 1):
        if maps_equivalent(g, ident, seed=seed):
            return n
        g = f.compose(g)
    return None


def matrix_map(chart: Chart, names: Sequence[str], matrix) -> CoordinateMap:
    """Linear map acting on the coordinates ``names`` by an integer/rational matrix."""
    m = [[Fraction(x) for x in row] for row in matrix]
    if len(m) != len(names) or any(len(r) != len(names) for r in m):
        raise ChartError("matrix shape does not match coordinate list")
    mapping = {}
    for i, n in enumerate(names):
        mapping[n] = E.add(*(E.mul(E.Const(m[i][j]), E.Var(names[j])) for j in range(len(names))))
    return CoordinateMap.from_mapping(chart, chart, mapping)
