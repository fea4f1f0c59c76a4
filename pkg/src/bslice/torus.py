"""Mapping tori with finite-order monodromy, collars, and trivializing covers.

Conventions: the time coordinate runs over [0, 1) on the base with the
identification (t, x) ~ (t + 1, phi(x)).  On the k-fold cover the time
coordinate also runs over [0, 1); the projection is t -> k t and the deck
group acts by ``mu_m(t, l) = (t - m/k, sigma_m(l))`` with
``sigma_m = phi^(-m)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import expr as E
from .bcalc import (
    BForm,
    BVectorField,
    decompose,
    exterior_derivative,
    forms_equivalent,
    forms_witness,
    interior_product,
    pullback,
    wedge,
)
from .charts import (
    Chart,
    Coordinate,
    CoordinateMap,
    equivalent,
    find_order,
    map_power,
    maps_equivalent,
)

ORDER_SEARCH_BOUND = 64
RATIONAL_DENOMINATOR_BOUND = 10**6


class TorusError(ValueError):
    pass


class NormalFormError(TorusError):
    pass


class DescentError(TorusError):
    def __init__(self, m: int, witness: dict):
        self.m = m
        self.witness = witness
        super().__init__(f"form is not invariant under deck transformation mu_{m}: {witness}")


def rationalize(x: float, tol: float = 1e-12) -> Fraction:
    q = Fraction(x).limit_denominator(RATIONAL_DENOMINATOR_BOUND)
    if abs(float(q) - x) > tol * max(1.0, abs(x)):
        raise NormalFormError(f"{x!r} is not recognizably rational")
    return q


def restrict_to_hypersurface(e: E.Expr, chart: Chart, seed: int = 0) -> E.Expr:
    """Set the defining coordinate to 0, resolving removable singularities.

    When substitution leaves a singular expression the limit is sampled; a
    constant limit is returned as an exact rational, otherwise this fails.
    """
    a = chart.defining_coordinate
    if a is None or a not in E.free_vars(e):
        return e
    rng = np.random.default_rng(seed)
    env = chart.sample(rng, 32, fixed={a: 0.0})
    try:
        r = E.substitute(e, {a: E.ZERO})
    except E.ExprError:
        r = None
    if r is not None and np.all(np.isfinite(E.evaluate_array(r, env))):
        return r
    vals = E.evaluate_limit(e, env, a)
    if np.all(np.isfinite(vals)) and np.ptp(vals) < 1e-9 * (1 + abs(vals[0])):
        return E.Const(rationalize(float(vals[0]), tol=1e-9))
    raise NormalFormError(f"cannot restrict {E.to_string(e)} to {a} = 0")


@dataclass(frozen=True)
class MappingTorus:
    """``[0,1] x L / (0, x) ~ (1, phi(x))`` with modular period ``period``."""

    leaf_chart: Chart
    beta_leaf: BForm
    monodromy: CoordinateMap
    period: Fraction
    declared_order: int
    time: str = "t"
    defining: str = "a"
    epsilon: float = 1.0
    compact: bool = True
    simply_connected: bool = False

    def __post_init__(self):
        object.__setattr__(self, "period", Fraction(self.period))
        if self.period <= 0:
            raise TorusError("modular period must be positive")
        if self.declared_order < 1:
            raise TorusError("monodromy order must be positive")
        if self.leaf_chart.dim % 2:
            raise TorusError("leaf chart must be even-dimensional")
        if self.monodromy.source != self.leaf_chart or self.monodromy.target != self.leaf_chart:
            raise TorusError("monodromy must map the leaf chart to itself")
        if self.beta_leaf.chart != self.leaf_chart or self.beta_leaf.degree != 2:
            raise TorusError("leaf form must be a 2-form on the leaf chart")

    @property
    def collar_chart(self) -> Chart:
        return Chart(
            (Coordinate.angle(self.time, 1),)
            + self.leaf_chart.coordinates
            + (Coordinate.defining(self.defining, self.epsilon),)
        )

    @property
    def leaf_names(self) -> tuple[str, ...]:
        return self.leaf_chart.names

    def monodromy_power(self, n: int) -> CoordinateMap:
        return map_power(self.monodromy, n % self.declared_order)

    def leaf_automorphism(self, m: int) -> CoordinateMap:
        """``sigma_m = phi^(-m)`` on the leaf chart."""
        return self.monodromy_power(-m)

    def validate(self, seed: int = 0) -> list[str]:
        problems = []
        ident = CoordinateMap.identity(self.leaf_chart)
        if not maps_equivalent(map_power(self.monodromy, self.declared_order), ident, seed=seed):
            problems.append(f"monodromy^{self.declared_order} is not the identity")
        else:
            for n in range(1, self.declared_order):
                if self.declared_order % n == 0 and maps_equivalent(
                    map_power(self.monodromy, n), ident, seed=seed
                ):
                    problems.append(f"monodromy has order {n}, not {self.declared_order}")
                    break
        w = forms_witness(pullback(self.monodromy, self.beta_leaf), self.beta_leaf, seed=seed)
        if w is not None:
            problems.append(f"monodromy does not preserve the leaf form: {w}")
        return problems

    def discover_order(self, seed: int = 0) -> int | None:
        return find_order(self.monodromy, ORDER_SEARCH_BOUND, seed=seed)

    def lift_leaf_map(self, f: CoordinateMap) -> CoordinateMap:
        """Extend a leaf map to the collar chart, fixing time and defining coordinates."""
        sub = {n: c for n, c in zip(self.leaf_names, f.components)}
        return CoordinateMap.from_mapping(self.collar_chart, self.collar_chart, sub)

    def shift_map(self) -> CoordinateMap:
        """``(t, x, a) -> (t + 1, phi(x), a)``; collar forms must be invariant under it."""
        m = self.lift_leaf_map(self.monodromy)
        comps = dict(m.as_substitution())
        comps[self.time] = E.add(E.Var(self.time), E.ONE)
        return CoordinateMap.from_mapping(self.collar_chart, self.collar_chart, comps)

    def reduce(self, point: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Bring points with arbitrary time into the fundamental domain [0, 1)."""
        t = np.asarray(point[self.time], dtype=float)
        n = np.floor(t).astype(int)
        out = {k: np.array(np.broadcast_to(v, t.shape), dtype=float) for k, v in point.items()}
        out[self.time] = t - n
        for shift in np.unique(n):
            sel = n == shift
            leaf = {k: out[k][sel] for k in self.leaf_names}
            img = self.leaf_automorphism(int(shift))(leaf)
            for k in self.leaf_names:
                out[k][sel] = img[k]
        return self.collar_chart.wrap(out)

    def normal_collar_form(self, c: Fraction | None = None) -> BForm:
        """``c dt ^ da/a + beta`` on the collar chart."""
        ch = self.collar_chart
        c = self.period if c is None else Fraction(c)
        sing = wedge(BForm.frame(ch, self.time, E.Const(c)), BForm.frame(ch, self.defining))
        return sing + self.leaf_form_on_collar()

    def leaf_form_on_collar(self) -> BForm:
        ch = self.collar_chart
        return BForm.build(
            ch,
            2,
            {tuple(self.leaf_names[i] for i in key): c for key, c in self.beta_leaf.terms},
        )


@dataclass(frozen=True)
class DefiningFormsPair:
    """Defining one- and two-forms, as da/a-free forms evaluated on ``a = 0``."""

    alpha: BForm
    beta: BForm


@dataclass(frozen=True)
class CollarModel:
    torus: MappingTorus
    omega: BForm

    def __post_init__(self):
        if self.omega.chart != self.torus.collar_chart:
            raise TorusError("collar form must live on the torus collar chart")

    @classmethod
    def normal(cls, torus: MappingTorus) -> "CollarModel":
        return cls(torus, torus.normal_collar_form())

    def defining_forms(self, seed: int = 0) -> DefiningFormsPair:
        alpha, beta = decompose(self.omega)
        ch = self.omega.chart
        alpha = alpha.map_coefficients(lambda c: restrict_to_hypersurface(c, ch, seed))
        beta = beta.map_coefficients(lambda c: restrict_to_hypersurface(c, ch, seed))
        return DefiningFormsPair(alpha, beta)

    def check_well_defined(self, seed: int = 0) -> dict | None:
        """Invariance under the mapping-torus identification; returns a witness on failure."""
        return forms_witness(pullback(self.torus.shift_map(), self.omega), self.omega, seed=seed)


def _alpha_constant(pair: DefiningFormsPair, time: str) -> Fraction:
    ch = pair.alpha.chart
    ti = ch.index(time)
    c = None
    for (i,), coeff in pair.alpha.terms:
        if i != ti:
            raise NormalFormError(
                f"defining one-form has a d{ch.names[i]} component; not proportional to d{time}"
            )
        c = coeff
    if c is None:
        raise NormalFormError("defining one-form vanishes")
    if isinstance(c, E.Const):
        if not c.is_rational:
            raise NormalFormError(f"modular period {E.to_string(c)} is not rational")
        return c.value
    raise NormalFormError(f"coefficient {E.to_string(c)} of d{time} is not constant")


def modular_period(collar: CollarModel, seed: int = 0) -> Fraction:
    """Exact modular period ``c`` read off ``alpha = c dt``."""
    c = _alpha_constant(collar.defining_forms(seed), collar.torus.time)
    if c <= 0:
        raise NormalFormError(f"modular period {c} is not positive; check orientation")
    return c


def modular_vector_field(collar: CollarModel, seed: int = 0) -> BVectorField:
    """``v_mod = (1/c) d/dt`` for a collar in normal form."""
    pair = collar.defining_forms(seed)
    c = _alpha_constant(pair, collar.torus.time)
    ti = pair.beta.chart.index(collar.torus.time)
    if any(ti in key for key, _ in pair.beta.terms):
        raise NormalFormError("defining two-form has a dt component")
    return BVectorField.from_mapping(collar.omega.chart, {collar.torus.time: E.Const(1 / c)})


def check_modular_contract(
    collar: CollarModel, v: BVectorField, seed: int = 0, samples: int = 128, tol: float = 1e-10
) -> dict:
    """Check ``alpha(v) = 1`` and ``i_v beta = 0`` at sample points on ``a = 0``."""
    from .bcalc import one_form_array, vector_array

    pair = collar.defining_forms(seed)
    ch = collar.omega.chart
    rng = np.random.default_rng(seed)
    env = ch.sample(rng, samples, fixed={ch.defining_coordinate: 0.0})
    alpha_v = np.einsum("pi,pi->p", one_form_array(pair.alpha, env), vector_array(v, env))
    iv_beta = interior_product(v, pair.beta)
    ib = one_form_array(iv_beta, env) if iv_beta.degree == 1 else np.zeros((samples, 1))
    err_alpha = float(np.max(np.abs(alpha_v - 1.0)))
    err_beta = float(np.max(np.abs(ib))) if ib.size else 0.0
    return {
        "alpha_v_error": err_alpha,
        "iota_beta_error": err_beta,
        "ok": err_alpha <= tol and err_beta <= tol,
    }


# ---------------------------------------------------------------------------
# finite covers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteCover:
    """The k-fold trivializing cover ``S^1 x L`` of a mapping torus."""

    base: MappingTorus
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise TorusError("cover order must be positive")
        ident = CoordinateMap.identity(self.base.leaf_chart)
        if not maps_equivalent(map_power(self.base.monodromy, self.k), ident):
            raise TorusError(f"monodromy^{self.k} is not the identity; the cover does not trivialize it")

    @property
    def chart(self) -> Chart:
        return self.base.collar_chart

    @property
    def cover_torus(self) -> MappingTorus:
        """The cover as a product mapping torus of period k c."""
        ident = CoordinateMap.identity(self.base.leaf_chart)
        return replace(self.base, monodromy=ident, period=self.base.period * self.k, declared_order=1)

    def deck(self, m: int) -> CoordinateMap:
        sigma = self.base.leaf_automorphism(m)
        lifted = self.base.lift_leaf_map(sigma)
        comps = lifted.as_substitution()
        comps[self.base.time] = E.add(E.Var(self.base.time), E.Const(Fraction(-(m % self.k), self.k)))
        return CoordinateMap.from_mapping(self.chart, self.chart, comps)

    def projection(self) -> CoordinateMap:
        """Local branch ``(t, l, a) -> (k t, l, a)`` of the covering map."""
        t = self.base.time
        return CoordinateMap.from_mapping(
            self.chart, self.chart, {t: E.mul(E.Const(self.k), E.Var(t))}
        )

    def section(self) -> CoordinateMap:
        """Inverse branch on the fundamental domain: ``t -> t / k``."""
        t = self.base.time
        return CoordinateMap.from_mapping(
            self.chart, self.chart, {t: E.mul(E.Const(Fraction(1, self.k)), E.Var(t))}
        )

    def project_points(self, point: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        p = {k: np.asarray(v, dtype=float) for k, v in point.items()}
        p[self.base.time] = self.k * p[self.base.time]
        return self.base.reduce(p)

    def lifted_circle(self, s: float) -> CoordinateMap:
        t = self.base.time
        return CoordinateMap.from_mapping(
            self.chart, self.chart, {t: E.add(E.Var(t), E.as_expr(float(s)))}
        )

    def check_group_action(self, seed: int = 0) -> bool:
        for m in range(self.k):
            for n in range(self.k):
                lhs = self.deck(m).compose(self.deck(n))
                if not maps_equivalent(lhs, self.deck((m + n) % self.k), seed=seed):
                    return False
        return True

    def check_faithful(self, seed: int = 0) -> bool:
        ident = CoordinateMap.identity(self.chart)
        return all(
            maps_equivalent(self.deck(m), ident, seed=seed) == (m % self.k == 0)
            for m in range(self.k)
        )

    def check_projection_invariance(self, seed: int = 0, samples: int = 64) -> bool:
        rng = np.random.default_rng(seed)
        env = self.chart.sample(rng, samples)
        base = self.project_points(env)
        for m in range(self.k):
            img = self.project_points(self.deck(m)(env, wrap=False))
            if np.max(self.chart.distance(img, base)) > 1e-9:
                return False
        return True


def lift_form(cover: FiniteCover, w: BForm) -> BForm:
    """``p^* w`` on the cover; the result is deck-invariant."""
    return pullback(cover.projection(), w)


def descent_witness(cover: FiniteCover, w: BForm, seed: int = 0) -> tuple[int, dict] | None:
    for m in range(1, cover.k):
        wit = forms_witness(pullback(cover.deck(m), w), w, seed=seed)
        if wit is not None:
            return m, wit
    return None


def quotient_form(cover: FiniteCover, w: BForm, seed: int = 0) -> BForm:
    """The unique base form lifting to ``w``, in fundamental-domain coordinates."""
    bad = descent_witness(cover, w, seed)
    if bad is not None:
        raise DescentError(*bad)
    return pullback(cover.section(), w)


# ---------------------------------------------------------------------------
# simply connected normal form
# ---------------------------------------------------------------------------

PATH_VAR = "_path_s"


@dataclass(frozen=True)
class SimplifiedNormalForm:
    c: Fraction
    potential: E.Expr
    defining_function: E.Expr
    omega_normal: BForm
    coordinate_change: CoordinateMap
    symbolic: bool


def path_potential(gamma: BForm, base_point: Mapping[str, float], skip: tuple = ()) -> E.Expr:
    """Potential ``h`` with ``dh = gamma`` by integrating along the straight
    path from ``base_point`` (defining coordinate from 0).

    The integral is exact when the integrand is polynomial in the path
    parameter, otherwise it becomes a quadrature node.
    """
    ch = gamma.chart
    a = ch.defining_coordinate
    s = E.Var(PATH_VAR)
    sub = {}
    for n in ch.names:
        if n in skip:
            continue
        if n == a:
            sub[n] = E.mul(s, E.Var(n))
        else:
            z0 = E.as_expr(float(base_point.get(n, 0.0)))
            sub[n] = E.add(z0, E.mul(s, E.add(E.Var(n), E.neg(z0))))
    body = []
    for (i,), coeff in gamma.terms:
        n = ch.names[i]
        if n in skip:
            continue
        on_path = E.substitute(coeff, sub)
        if n == a:
            body.append(E.mul(on_path, E.power(s, -1)))
        else:
            z0 = E.as_expr(float(base_point.get(n, 0.0)))
            body.append(E.mul(on_path, E.add(E.Var(n), E.neg(z0))))
    return E.integral(E.add(*body), PATH_VAR)


def simplify_simply_connected(
    collar: CollarModel,
    base_point: Mapping[str, float] | None = None,
    local: bool = False,
    seed: int = 0,
) -> SimplifiedNormalForm:
    """Rewrite ``c dt ^ da/a + dt ^ eta + beta`` as ``c dt ^ df/f + beta``.

    Also accepts a non-constant coefficient ``g`` of ``dt ^ da/a`` with
    constant restriction ``c`` to the hypersurface; ``f = a e^h`` with
    ``dh = (g/c - 1) da/a + eta/c``.
    """
    torus = collar.torus
    if not (torus.simply_connected or local):
        raise NormalFormError("leaf is not simply connected; pass local=True near an orbit")
    ch = collar.omega.chart
    t, a = torus.time, torus.defining
    dt = BForm.frame(ch, t)
    gamma = interior_product(BVectorField.from_mapping(ch, {t: 1}), collar.omega)
    beta = collar.omega - wedge(dt, gamma)
    ti, ai = ch.index(t), ch.index(a)
    for key, coeff in beta.terms:
        if ai in key:
            raise NormalFormError("leaf part contains da/a; form is not of the expected shape")
        if {t, a} & E.free_vars(coeff):
            raise NormalFormError("leaf form depends on t or a")
    for _, coeff in gamma.terms:
        if t in E.free_vars(coeff):
            raise NormalFormError("form depends on t")
    g = gamma.coefficient((ai,))
    c_expr = restrict_to_hypersurface(g, ch, seed)
    if not (isinstance(c_expr, E.Const) and c_expr.is_rational and c_expr.value != 0):
        raise NormalFormError(f"coefficient of dt ^ da/a on Z is {E.to_string(c_expr)}, not a rational constant")
    c = c_expr.value
    closed_part = gamma.scale(E.Const(1 / c)) - BForm.frame(ch, a)
    if not forms_equivalent(exterior_derivative(closed_part), BForm.zero(ch, 2), seed=seed):
        raise NormalFormError("eta is not closed")
    h = path_potential(closed_part, base_point or {}, skip=(t,))
    f = E.mul(E.Var(a), E.exp(h))
    change = CoordinateMap.from_mapping(ch, ch, {a: f})
    normal = CollarModel(torus, torus.normal_collar_form(c) - torus.leaf_form_on_collar() + beta).omega
    return SimplifiedNormalForm(
        c=c,
        potential=h,
        defining_function=f,
        omega_normal=normal,
        coordinate_change=change,
        symbolic=not _has_integral(h),
    )


def _has_integral(e: E.Expr) -> bool:
    if isinstance(e, E.Integral):
        return True
    return any(_has_integral(ch) for ch in E.children(e))


def verify_simplification(collar: CollarModel, result: SimplifiedNormalForm, seed: int = 0) -> dict | None:
    """Witness if ``F^* omega_normal`` differs from the original form."""
    return forms_witness(pullback(result.coordinate_change, result.omega_normal), collar.omega, seed=seed)
