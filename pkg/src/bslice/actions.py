"""Group actions on b-symplectic mapping tori: invariance, transversality,
leaf-fixing subgroups and orbit isotropy data.

The acting group is ``S^1 x K``.  The circle factor moves the time
coordinate with an integer base degree; the factor ``K`` acts on leaves
(trivially, by a finite cyclic group, by a torus of translations, or by
SO(3) diagonally on sphere blocks).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import expr as E
from .bcalc import BForm, form_matrix, forms_witness, pullback
from .charts import Chart, CoordinateMap, map_power, maps_equivalent
from .torus import MappingTorus

FD_STEP = 1e-6
ORBIT_TOL = 1e-7
RANK_TOL = 1e-6
CIRCLE_PARAM = "s"


class ActionError(ValueError):
    pass


class TransversalityError(ActionError):
    pass


class InvarianceError(ActionError):
    def __init__(self, what: str, witness: dict):
        self.witness = witness
        super().__init__(f"{what} does not preserve the form: {witness}")


# ---------------------------------------------------------------------------
# SO(3) helpers
# ---------------------------------------------------------------------------


def rodrigues(axis: Sequence[float], angle: float) -> np.ndarray:
    k = np.asarray(axis, dtype=float)
    n = np.linalg.norm(k)
    if n == 0:
        return np.eye(3)
    k = k / n
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def kabsch(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Rotation R minimizing ``sum |R p_i - q_i|^2`` (rows are points)."""
    U, _, Vt = np.linalg.svd(P.T @ Q)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    return Vt.T @ np.diag([1.0, 1.0, d]) @ U.T


def archimedes_to_vec(theta, h) -> np.ndarray:
    """Unit vector with height ``h`` and azimuth ``2 pi theta``."""
    theta = np.asarray(theta, dtype=float)
    h = np.asarray(h, dtype=float)
    r = np.sqrt(np.clip(1 - h**2, 0, None))
    return np.stack([r * np.cos(2 * np.pi * theta), r * np.sin(2 * np.pi * theta), h], axis=-1)


def vec_to_archimedes(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    theta = np.mod(np.arctan2(x[..., 1], x[..., 0]) / (2 * np.pi), 1.0)
    return theta, np.clip(x[..., 2], -1.0, 1.0)


def _canonical_rotation(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Rotation taking collinear rows ``P`` to ``Q``, chosen without a free
    stabilizer parameter: the identity, the minimal rotation, or a half turn
    about the perpendicular axis closest to the first coordinate axis."""
    x, y = P[0], Q[0]
    c = float(np.clip(x @ y, -1.0, 1.0))
    if c > 1 - 1e-12:
        return np.eye(3)
    if c < -1 + 1e-12:
        e = np.eye(3)[int(np.argmin(np.abs(x)))]
        axis = e - (e @ x) * x
        return rodrigues(axis, math.pi)
    return rodrigues(np.cross(x, y), math.acos(c))


# ---------------------------------------------------------------------------
# leaf factor K
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupDescriptor:
    kind: str
    dim: int
    order: int | None = None
    rank: int = 0

    @property
    def name(self) -> str:
        if self.kind == "cyclic":
            return f"Z{self.order}"
        if self.kind == "torus":
            return f"T{self.rank}"
        return {"trivial": "trivial", "so3": "SO3", "so2": "SO2", "circle": "S1"}[self.kind]

    @property
    def compact(self) -> bool:
        return True

    @property
    def abelian(self) -> bool:
        return self.kind != "so3"


TRIVIAL = GroupDescriptor("trivial", 0, 1)


class LeafAction:
    """Action of a compact group ``K`` on a leaf chart.

    Elements are opaque objects understood by :meth:`act`.
    """

    group: GroupDescriptor
    chart: Chart

    def identity(self):
        raise NotImplementedError

    def act(self, g, point: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def inverse(self, g):
        raise NotImplementedError

    def one_parameter(self) -> list:
        """Callables ``eps -> element`` spanning the Lie algebra."""
        return []

    def sample_elements(self, rng: np.random.Generator, n: int) -> list:
        return [self.identity()]

    def find_element(self, z: Mapping[str, float], w: Mapping[str, float]):
        """Some ``h`` with ``h z = w``, or None if ``w`` is not in ``K z``."""
        raise NotImplementedError

    def generators_at(self, z: Mapping[str, float]) -> np.ndarray:
        """Infinitesimal generators at ``z`` as columns in chart coordinates."""
        cols = []
        pz = {k: np.array([float(v)]) for k, v in z.items()}
        for curve in self.one_parameter():
            plus = self.act(curve(FD_STEP), pz)
            minus = self.act(curve(-FD_STEP), pz)
            cols.append(_chart_diff(self.chart, plus, minus) / (2 * FD_STEP))
        if not cols:
            return np.zeros((self.chart.dim, 0))
        return np.stack(cols, axis=1)

    def stabilizer(self, z: Mapping[str, float]) -> GroupDescriptor:
        rank = _rank(self.generators_at(z))
        return self._stabilizer_from_rank(z, rank)

    def _stabilizer_from_rank(self, z, rank: int) -> GroupDescriptor:
        if self.group.dim - rank == 0:
            return TRIVIAL
        raise ActionError(f"unsupported stabilizer of dimension {self.group.dim - rank}")


def _chart_diff(chart: Chart, p: Mapping, q: Mapping) -> np.ndarray:
    out = []
    for c in chart.coordinates:
        d = np.asarray(p[c.name], dtype=float) - np.asarray(q[c.name], dtype=float)
        if c.kind == "angle":
            P = c.period_value
            d = d - P * np.round(d / P)
        out.append(d.reshape(-1)[0] if d.size == 1 else d)
    return np.array(out, dtype=float)


def _rank(m: np.ndarray) -> int:
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > RANK_TOL * max(1.0, s[0])))


class TrivialAction(LeafAction):
    def __init__(self, chart: Chart):
        self.chart = chart
        self.group = TRIVIAL

    def identity(self):
        return None

    def inverse(self, g):
        return None

    def act(self, g, point):
        return {k: np.asarray(v, dtype=float) for k, v in point.items()}

    def find_element(self, z, w):
        d = _chart_diff(self.chart, {k: np.array([v]) for k, v in z.items()}, {k: np.array([v]) for k, v in w.items()})
        return None if np.max(np.abs(d)) > ORBIT_TOL else (None,)


class CyclicAction(LeafAction):
    """``Z_n`` generated by a symbolic leaf map."""

    def __init__(self, generator: CoordinateMap, order: int, seed: int = 0):
        self.chart = generator.source
        self.generator = generator
        self.group = GroupDescriptor("cyclic", 0, order)
        if not maps_equivalent(map_power(generator, order), CoordinateMap.identity(self.chart), seed=seed):
            raise ActionError(f"generator does not have order dividing {order}")
        self._powers = [map_power(generator, m) for m in range(order)]

    def identity(self):
        return 0

    def inverse(self, g):
        return (-g) % self.group.order

    def act(self, g, point):
        return self._powers[g % self.group.order](point)

    def sample_elements(self, rng, n):
        return list(range(self.group.order))

    def find_element(self, z, w):
        pz = {k: np.array([v]) for k, v in z.items()}
        pw = {k: np.array([v]) for k, v in w.items()}
        for m in range(self.group.order):
            if np.max(np.abs(_chart_diff(self.chart, self.act(m, pz), pw))) <= ORBIT_TOL:
                return (m,)
        return None

    def _stabilizer_from_rank(self, z, rank):
        pz = {k: np.array([v]) for k, v in z.items()}
        fix = sum(
            1
            for m in range(self.group.order)
            if np.max(np.abs(_chart_diff(self.chart, self.act(m, pz), pz))) <= ORBIT_TOL
        )
        return TRIVIAL if fix == 1 else GroupDescriptor("cyclic", 0, fix)


class TorusTranslationAction(LeafAction):
    """``T^r`` acting by unit-speed translations of angle coordinates."""

    def __init__(self, chart: Chart, translated: Sequence[str]):
        self.chart = chart
        for n in translated:
            if chart.coordinate(n).kind != "angle":
                raise ActionError(f"{n} is not an angle coordinate")
        self.translated = tuple(translated)
        self.group = GroupDescriptor("torus", len(translated), rank=len(translated))

    def identity(self):
        return np.zeros(len(self.translated))

    def inverse(self, g):
        return -np.asarray(g)

    def act(self, g, point):
        out = {k: np.asarray(v, dtype=float) for k, v in point.items()}
        for n, s in zip(self.translated, g):
            out[n] = out[n] + s * self.chart.coordinate(n).period_value
        return self.chart.wrap(out)

    def one_parameter(self):
        r = len(self.translated)
        return [lambda eps, i=i: np.eye(r)[i] * eps for i in range(r)]

    def sample_elements(self, rng, n):
        return [rng.random(len(self.translated)) for _ in range(n)]

    def find_element(self, z, w):
        g = []
        for c in self.chart.coordinates:
            d = float(w[c.name]) - float(z[c.name])
            if c.name in self.translated:
                q = d / c.period_value
                g.append(q - round(q))
            else:
                if c.kind == "angle":
                    d -= c.period_value * round(d / c.period_value)
                if abs(d) > ORBIT_TOL:
                    return None
        return (np.array(g),)


class SO3DiagonalAction(LeafAction):
    """SO(3) rotating each sphere block ``(theta, h)`` simultaneously."""

    def __init__(self, chart: Chart, blocks: Sequence[tuple[str, str]]):
        self.chart = chart
        self.blocks = tuple(tuple(b) for b in blocks)
        for th, _ in self.blocks:
            c = chart.coordinate(th)
            if c.kind != "angle" or abs(c.period_value - 1.0) > 0:
                raise ActionError(f"{th} must be an angle of period 1")
        self.group = GroupDescriptor("so3", 3)

    def identity(self):
        return np.eye(3)

    def inverse(self, g):
        return np.asarray(g).T

    def act(self, g, point):
        out = {k: np.asarray(v, dtype=float) for k, v in point.items()}
        R = np.asarray(g)
        for th, h in self.blocks:
            x = archimedes_to_vec(out[th], out[h])
            out[th], out[h] = vec_to_archimedes(x @ R.T)
        return out

    def one_parameter(self):
        return [lambda eps, i=i: rodrigues(np.eye(3)[i], eps) for i in range(3)]

    def sample_elements(self, rng, n):
        out = []
        for _ in range(n):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            w, x, y, z = q
            out.append(
                np.array(
                    [
                        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
                    ]
                )
            )
        return out

    def vectors(self, p: Mapping[str, float]) -> np.ndarray:
        return np.stack([archimedes_to_vec(float(p[th]), float(p[h])) for th, h in self.blocks])

    def find_element(self, z, w):
        for n in self.chart.names:
            if not any(n in b for b in self.blocks):
                c = self.chart.coordinate(n)
                d = float(w[n]) - float(z[n])
                if c.kind == "angle":
                    d -= c.period_value * round(d / c.period_value)
                if abs(d) > ORBIT_TOL:
                    return None
        P, Q = self.vectors(z), self.vectors(w)
        R = _canonical_rotation(P, Q) if np.linalg.matrix_rank(P, tol=1e-8) < 2 else kabsch(P, Q)
        if np.max(np.abs(P @ R.T - Q)) > ORBIT_TOL:
            return None
        return (R,)

    def _stabilizer_from_rank(self, z, rank):
        d = 3 - rank
        if d == 0:
            return TRIVIAL
        if d == 1:
            return GroupDescriptor("so2", 1)
        return GroupDescriptor("so3", 3)


# ---------------------------------------------------------------------------
# circle factor and full action
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CircleAction:
    """``rho_s`` on the collar chart; components may use the parameter ``s``."""

    chart: Chart
    components: Mapping[str, E.Expr]
    time: str = "t"

    def __post_init__(self):
        comps = {k: E.normalize(E.as_expr(v)) for k, v in self.components.items()}
        object.__setattr__(self, "components", comps)
        for k, v in comps.items():
            if k not in self.chart:
                raise ActionError(f"unknown coordinate {k}")
            extra = E.free_vars(v) - set(self.chart.names) - {CIRCLE_PARAM}
            if extra:
                raise ActionError(f"component for {k} uses unknown names {sorted(extra)}")
        if self.chart.defining_coordinate in comps and comps[self.chart.defining_coordinate] != E.Var(
            self.chart.defining_coordinate
        ):
            raise ActionError("circle action must fix the defining coordinate")

    @property
    def base_degree(self) -> int:
        t = self.components.get(self.time, E.Var(self.time))
        d = E.differentiate(t, CIRCLE_PARAM)
        if not isinstance(d, E.Const) or not d.is_rational or d.value.denominator != 1:
            raise TransversalityError(
                f"time component {E.to_string(t)} does not advance by an integer multiple of s"
            )
        rest = E.substitute(t, {CIRCLE_PARAM: E.ZERO})
        if rest != E.Var(self.time):
            raise ActionError(f"time component {E.to_string(t)} is not t + d s")
        return int(d.value)

    def at(self, s) -> CoordinateMap:
        sub = {CIRCLE_PARAM: E.as_expr(s)}
        return CoordinateMap.from_mapping(
            self.chart, self.chart, {k: E.substitute(v, sub) for k, v in self.components.items()}
        )

    def leaf_part(self) -> dict[str, E.Expr]:
        return {
            k: v
            for k, v in self.components.items()
            if k not in (self.time, self.chart.defining_coordinate) and v != E.Var(k)
        }


@dataclass
class GroupAction:
    """``S^1 x K`` acting on a mapping torus."""

    torus: MappingTorus
    circle: CircleAction
    factor: LeafAction | None = None

    def __post_init__(self):
        if self.circle.chart != self.torus.collar_chart:
            raise ActionError("circle action must live on the collar chart")
        if self.factor is None:
            self.factor = TrivialAction(self.torus.leaf_chart)
        if self.factor.chart != self.torus.leaf_chart:
            raise ActionError("leaf action must live on the leaf chart")

    @property
    def group(self) -> str:
        k = self.factor.group
        return "S1" if k.kind == "trivial" else f"S1 x {k.name}"


def check_invariance(
    action: GroupAction, w: BForm, seed: int = 0, n_params: int = 6
) -> dict | None:
    """Witness of non-invariance under sampled group elements, or None."""
    rng = np.random.default_rng(seed)
    for s in [Fraction(1, 7), Fraction(1, 3)] + list(rng.random(n_params - 2)):
        F = action.circle.at(E.as_expr(s) if isinstance(s, Fraction) else float(s))
        wit = forms_witness(pullback(F, w), w, seed=seed)
        if wit is not None:
            return {"element": f"rho_{float(s):.6g}", **wit}
    if action.factor.group.kind in ("trivial",):
        return None
    if isinstance(action.factor, CyclicAction):
        F = action.torus.lift_leaf_map(action.factor.generator)
        wit = forms_witness(pullback(F, w), w, seed=seed)
        return None if wit is None else {"element": "generator", **wit}
    return _numeric_invariance(action, w, rng)


def _numeric_invariance(action: GroupAction, w: BForm, rng, samples: int = 32, tol: float = 1e-6):
    """Finite-difference pullback check for numerically defined factors."""
    ch = w.chart
    leaf = action.torus.leaf_chart
    for g in action.factor.sample_elements(rng, 4):
        env = ch.sample(rng, samples)
        env[ch.defining_coordinate] = np.where(
            np.abs(env[ch.defining_coordinate]) < 1e-3, 0.5, env[ch.defining_coordinate]
        )
        J = np.zeros((samples, ch.dim, ch.dim))
        base = _act_collar(action, g, env)
        for j, n in enumerate(ch.names):
            if n not in leaf:
                J[:, j, j] = 1.0
                continue
            p = dict(env)
            m = dict(env)
            p[n] = env[n] + FD_STEP
            m[n] = env[n] - FD_STEP
            fp, fm = _act_collar(action, g, p), _act_collar(action, g, m)
            for i, c in enumerate(ch.coordinates):
                d = fp[c.name] - fm[c.name]
                if c.kind == "angle":
                    d = d - c.period_value * np.round(d / c.period_value)
                J[:, i, j] = d / (2 * FD_STEP)
        a = ch.defining_index
        J[:, a, :] = 0
        J[:, a, a] = 1.0
        M1 = form_matrix(w, base)
        M0 = form_matrix(w, env)
        pulled = np.einsum("pki,pkl,plj->pij", J, M1, J)
        err = np.max(np.abs(pulled - M0), axis=(1, 2))
        bad = int(np.argmax(err))
        if err[bad] > tol * (1 + np.max(np.abs(M0[bad]))):
            return {"element": "sampled K element", "point": {k: float(v[bad]) for k, v in env.items()}, "error": float(err[bad])}
    return None


def _act_collar(action: GroupAction, g, env):
    leaf_names = action.torus.leaf_names
    img = action.factor.act(g, {k: env[k] for k in leaf_names})
    out = dict(env)
    out.update(img)
    return out


def check_transversality(action: GroupAction) -> int:
    """Base degree ``d``; raises unless the circle is transverse to the leaves."""
    d = action.circle.base_degree
    if d == 0:
        raise TransversalityError("circle action is tangent to the leaves")
    return d


def check_well_defined(action: GroupAction, seed: int = 0, samples: int = 32) -> bool:
    """``rho_1`` must be the identity of the mapping torus."""
    ch = action.torus.collar_chart
    rng = np.random.default_rng(seed)
    env = ch.sample(rng, samples)
    img = action.torus.reduce(action.circle.at(E.ONE)(env, wrap=False))
    return bool(np.max(ch.distance(img, ch.wrap(env))) <= 1e-9)


def leaf_fixing_subgroup(action: GroupAction, seed: int = 0) -> int:
    """Order ``k`` of ``Gamma = {s : rho_s(L) = L}``."""
    k = abs(check_transversality(action))
    if not check_well_defined(action, seed):
        raise ActionError("rho_1 is not the identity on the mapping torus")
    ident = CoordinateMap.identity(action.torus.leaf_chart)
    if not maps_equivalent(map_power(action.torus.monodromy, k), ident, seed=seed):
        raise ActionError(f"monodromy^{k} is not the identity; incompatible with base degree {k}")
    return k


def gamma_leaf_map(action: GroupAction, k: int, m: int, point: Mapping[str, np.ndarray]) -> dict:
    """Leaf part of ``rho_{m/k}`` applied to points of the leaf ``t = 0``."""
    torus = action.torus
    ch = torus.collar_chart
    some = next(iter(point.values()))
    n = np.asarray(some).shape
    env = {torus.time: np.zeros(n), ch.defining_coordinate: np.zeros(n)}
    env.update({k2: np.asarray(v, dtype=float) for k2, v in point.items()})
    img = torus.reduce(action.circle.at(E.Const(Fraction(m, k)))(env, wrap=False))
    if np.max(np.abs(np.mod(img[torus.time] + 0.5, 1.0) - 0.5)) > 1e-9:
        raise ActionError("rho_{m/k} does not preserve the leaf t = 0")
    return {n2: img[n2] for n2 in torus.leaf_names}


def check_monodromy_compatible(action: GroupAction, k: int, seed: int = 0) -> bool:
    """The generator of Gamma must act on the leaf through the monodromy class."""
    torus = action.torus
    rng = np.random.default_rng(seed)
    env = torus.leaf_chart.sample(rng, 32)
    img = gamma_leaf_map(action, k, 1, env)
    if action.circle.leaf_part():
        return True
    expect = torus.leaf_automorphism(1)(env)
    return bool(np.max(torus.leaf_chart.distance(img, expect)) <= 1e-9)


@dataclass(frozen=True)
class ProductDecomposition:
    variant: str
    k: int
    factor: GroupDescriptor
    gamma: str

    def to_dict(self) -> dict:
        return {"variant": self.variant, "k": self.k, "K": self.factor.name, "Gamma": self.gamma}


def product_decomposition(action: GroupAction, seed: int = 0) -> ProductDecomposition:
    """``G = S^1 x K`` with ``Gamma = Z_k`` the leaf-fixing subgroup of the circle."""
    k = leaf_fixing_subgroup(action, seed)
    if not check_monodromy_compatible(action, k, seed):
        raise ActionError("Gamma generator does not realize the monodromy class")
    return ProductDecomposition("product", k, action.factor.group, f"Z{k}")


# ---------------------------------------------------------------------------
# orbit isotropy
# ---------------------------------------------------------------------------


@dataclass
class IsotropyData:
    point: dict
    k: int
    l: int
    m0: int
    stabilizer: GroupDescriptor
    h: object
    h_trivial: bool
    orbit_dim: int
    V_dim: int
    m_dim: int
    sigma: np.ndarray
    normal_basis: np.ndarray
    null_basis: np.ndarray

    def to_dict(self) -> dict:
        return {
            "point": {k: round(float(v), 12) for k, v in self.point.items()},
            "k": self.k,
            "l": self.l,
            "m0": self.m0,
            "H_z": self.stabilizer.name,
            "h_is_identity": self.h_trivial,
            "orbit_dim": self.orbit_dim,
            "V_dim": self.V_dim,
            "m_star_dim": self.m_dim,
            "sigma": [[round(float(x), 9) + 0.0 for x in row] for row in self.sigma],
        }


def _leaf_jacobian(chart: Chart, f, z: Mapping[str, float]) -> np.ndarray:
    J = np.zeros((chart.dim, chart.dim))
    for j, n in enumerate(chart.names):
        p = {k: np.array([float(v)]) for k, v in z.items()}
        m = {k: np.array([float(v)]) for k, v in z.items()}
        p[n] = p[n] + FD_STEP
        m[n] = m[n] - FD_STEP
        J[:, j] = _chart_diff(chart, f(p), f(m)) / (2 * FD_STEP)
    return J


def symplectic_gram_schmidt(B: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Columns ``e1, f1, e2, f2, ...`` spanning ``basis`` with ``B(e_i, f_i) = 1``."""
    vecs = [basis[:, i].copy() for i in range(basis.shape[1])]
    out = []
    om = lambda u, v: float(u @ B @ v)
    while vecs:
        e = vecs.pop(0)
        j = max(range(len(vecs)), key=lambda i: abs(om(e, vecs[i])), default=None)
        if j is None or abs(om(e, vecs[j])) < RANK_TOL:
            raise ActionError("restricted form is degenerate")
        f = vecs.pop(j)
        f = f / om(e, f)
        out.extend([e, f])
        vecs = [v - om(v, f) * e + om(v, e) * f for v in vecs]
    return np.stack(out, axis=1) if out else np.zeros((basis.shape[0], 0))


def _null_space(A: np.ndarray) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    u, s, vt = np.linalg.svd(A)
    r = int(np.sum(s > RANK_TOL * max(1.0, s[0] if s.size else 1.0)))
    return vt[r:].T


def symplectic_normal_space(B: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Darboux basis of a complement of ``W cap W^omega`` in ``W^omega``, and a
    basis of ``W cap W^omega``."""
    n = B.shape[0]
    Womega = _null_space(W.T @ B) if W.shape[1] else np.eye(n)
    if W.shape[1]:
        # vectors of W^omega already lying in span W
        Pw = W @ np.linalg.pinv(W)
        N = Womega @ _null_space(Womega - Pw @ Womega)
    else:
        N = np.zeros((n, 0))
    if N.shape[1]:
        comp = Womega - N @ np.linalg.lstsq(N, Womega, rcond=None)[0]
        u, s, _ = np.linalg.svd(comp, full_matrices=False)
        comp = u[:, s > RANK_TOL]
    else:
        comp = Womega
    return symplectic_gram_schmidt(B, comp), N


def isotropy_decomposition(
    action: GroupAction, z: Mapping[str, float], beta: BForm | None = None, seed: int = 0
) -> IsotropyData:
    """Isotropy data of the orbit through the leaf point ``z``."""
    torus = action.torus
    leaf = torus.leaf_chart
    beta = beta or torus.beta_leaf
    k = leaf_fixing_subgroup(action, seed)
    z = {n: float(z[n]) for n in leaf.names}
    K = action.factor
    pz = {n: np.array([v]) for n, v in z.items()}
    hits = []
    for m in range(k):
        w = {n: float(v[0]) for n, v in gamma_leaf_map(action, k, m, pz).items()}
        found = K.find_element(z, w)
        if found is not None:
            hits.append((m, found[0]))
    l = len(hits)
    if l == 0 or k % l:
        raise ActionError("inconsistent Gamma isotropy")
    m0 = k // l
    h = dict(hits)[m0 % k] if l > 1 else K.identity()
    h_trivial = _is_identity(K, h)

    def F(p):
        g = gamma_leaf_map(action, k, m0, p)
        return K.act(K.inverse(h), g)

    A = _leaf_jacobian(leaf, F, z)
    W = K.generators_at(z)
    orbit_dim = _rank(W)
    B = form_matrix(beta, pz)[0]
    darboux, N = symplectic_normal_space(B, W)
    # directions transverse to the orbit and to V (the m* factor when the
    # orbit is not symplectic)
    span = np.hstack([W, darboux])
    extra = _null_space(span.T) if span.shape[1] else np.eye(leaf.dim)
    normal = np.hstack([darboux, extra])
    if normal.shape[1]:
        aug = np.hstack([normal, W])
        coords = np.linalg.lstsq(aug, np.linalg.solve(A, normal), rcond=None)[0]
        sigma = coords[: normal.shape[1]]
    else:
        sigma = np.zeros((0, 0))
    return IsotropyData(
        point=z,
        k=k,
        l=l,
        m0=m0,
        stabilizer=K.stabilizer(z),
        h=h,
        h_trivial=h_trivial,
        orbit_dim=orbit_dim,
        V_dim=darboux.shape[1],
        m_dim=extra.shape[1],
        sigma=sigma,
        normal_basis=normal,
        null_basis=N,
    )


def _is_identity(K: LeafAction, h) -> bool:
    e = K.identity()
    if e is None or h is None:
        return True
    return bool(np.allclose(np.asarray(h, dtype=float), np.asarray(e, dtype=float), atol=1e-8))
