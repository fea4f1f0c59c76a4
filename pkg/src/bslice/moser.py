"""Relative Moser path method for b-symplectic forms near an orbit.

Along ``omega_t = (1 - t) omega0 + t omega1`` the field ``v_t`` solves
``i_{v_t} omega_t = lam`` with ``d lam = omega0 - omega1``, so the time-one
flow ``phi`` satisfies ``phi^* omega1 = omega0``.  ``lam`` comes from the
radial homotopy operator centered on the anchor orbit: non-orbit
coordinates are scaled toward the anchor, the defining coordinate toward 0,
and the orbit coordinates are left alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import expr as E
from .bcalc import (
    BForm,
    BVectorField,
    exterior_derivative,
    form_matrix,
    forms_witness,
    interior_product,
    one_form_array,
    pullback,
)
from .charts import Chart, CoordinateMap

BOX_RADIUS = 0.1
MIN_RADIUS = 1e-3
JACOBIAN_STEP = 1e-5
DET_TOL = 1e-9
CERT_TOL = 1e-6
SOLVE_TOL = 1e-10
CIRCLE_NODES = 64
HOMOTOPY_VAR = "_u"


class MoserError(ValueError):
    pass


class DegenerateFormError(MoserError):
    def __init__(self, t: float, point: dict):
        self.t = t
        self.point = point
        super().__init__(f"omega_t is degenerate at t = {t:.6g}, point {point}")


@dataclass(frozen=True)
class MoserProblem:
    omega0: BForm
    omega1: BForm
    anchor: Mapping[str, float]
    orbit: tuple[str, ...] = ("t",)
    symmetry: tuple[CoordinateMap, ...] | None = None

    def __post_init__(self):
        if self.omega0.chart != self.omega1.chart:
            raise MoserError("forms live on different charts")
        if self.omega0.degree != 2 or self.omega1.degree != 2:
            raise MoserError("Moser problems need 2-forms")
        ch = self.chart
        a = ch.defining_coordinate
        if a is None:
            raise MoserError("chart has no defining coordinate")
        anchor = {n: float(v) for n, v in self.anchor.items()}
        anchor.setdefault(a, 0.0)
        if anchor[a] != 0.0:
            raise MoserError("anchor must lie on the critical hypersurface")
        missing = set(self.scaled) - set(anchor)
        if missing:
            raise MoserError(f"anchor lacks coordinates {sorted(missing)}")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "orbit", tuple(self.orbit))

    @property
    def chart(self) -> Chart:
        return self.omega0.chart

    @property
    def scaled(self) -> tuple[str, ...]:
        a = self.chart.defining_coordinate
        return tuple(n for n in self.chart.names if n not in self.orbit and n != a)

    def anchor_mismatch(self, samples: int = 8) -> float:
        """Largest b-frame entry of ``omega0 - omega1`` along the anchor orbit."""
        env = self.anchor_orbit(samples)
        return float(np.max(np.abs(form_matrix(self.omega0 - self.omega1, env))))

    def anchor_orbit(self, n: int) -> dict[str, np.ndarray]:
        env = {k: np.full(n, v) for k, v in self.anchor.items()}
        for o in self.orbit:
            P = self.chart.coordinate(o).period_value
            env[o] = np.linspace(0.0, P if math.isfinite(P) else 1.0, n, endpoint=False)
        return env

    def local_samples(
        self, rng: np.random.Generator, n: int, radius: float, on_z: float = 0.0
    ) -> dict[str, np.ndarray]:
        """Points in the box of half-width ``radius`` around the anchor orbit.

        A fraction ``on_z`` lies on ``a = 0``; the rest have ``|a| >= radius/20``.
        """
        ch = self.chart
        a = ch.defining_coordinate
        env = ch.sample(rng, n)
        for z in self.scaled:
            env[z] = self.anchor[z] + rng.uniform(-radius, radius, n)
        mag = rng.uniform(radius / 20, radius, n)
        env[a] = np.where(rng.random(n) < 0.5, -mag, mag)
        if on_z:
            env[a] = np.where(rng.random(n) < on_z, 0.0, env[a])
        return env


@dataclass(frozen=True)
class PrimitiveDecomposition:
    """``lam = -g da/a + eta`` with ``eta`` smooth."""

    g: E.Expr
    eta: BForm

    @property
    def chart(self) -> Chart:
        return self.eta.chart

    def primitive(self) -> BForm:
        a = self.chart.defining_coordinate
        return BForm.frame(self.chart, a, E.neg(self.g)) + self.eta

    @classmethod
    def from_primitive(cls, lam: BForm) -> "PrimitiveDecomposition":
        ai = lam.chart.defining_index
        g = E.neg(lam.coefficient((ai,)))
        return cls(g, lam.smooth_part())

    def d_identity_error(self, problem: MoserProblem, seed: int = 0, samples: int = 64) -> float:
        rng = np.random.default_rng(seed)
        env = problem.local_samples(rng, samples, BOX_RADIUS, on_z=0.25)
        lhs = form_matrix(exterior_derivative(self.primitive()), env)
        rhs = form_matrix(problem.omega0 - problem.omega1, env)
        return float(np.max(np.abs(lhs - rhs)))


def relative_primitive(problem: MoserProblem, seed: int = 0, tol: float = 1e-8) -> PrimitiveDecomposition:
    """Radial homotopy primitive of ``omega0 - omega1``."""
    ch = problem.chart
    diff = problem.omega0 - problem.omega1
    if diff.is_zero():
        return PrimitiveDecomposition(E.ZERO, BForm.zero(ch, 1))
    wit = forms_witness(exterior_derivative(diff), BForm.zero(ch, 3), seed=seed)
    if wit is not None:
        raise MoserError(f"omega0 - omega1 is not closed: {wit}")
    a = ch.defining_coordinate
    orbit_keys = {ch.index(o) for o in problem.orbit} | {ch.defining_index}
    env = problem.anchor_orbit(16)
    for key, coeff in diff.terms:
        if set(key) <= orbit_keys:
            vals = E.evaluate_limit(coeff, env, a)
            if np.max(np.abs(vals)) > tol:
                raise MoserError(
                    "omega0 - omega1 does not vanish on the anchor orbit in the orbit/normal block"
                )
    X = BVectorField.from_mapping(
        ch,
        {a: E.ONE, **{z: E.add(E.Var(z), E.as_expr(-problem.anchor[z])) for z in problem.scaled}},
    )
    contracted = interior_product(X, diff)
    u = E.Var(HOMOTOPY_VAR)
    sub = {a: E.mul(u, E.Var(a))}
    for z in problem.scaled:
        z0 = E.as_expr(problem.anchor[z])
        sub[z] = E.add(z0, E.mul(u, E.add(E.Var(z), E.neg(z0))))
    scaled_idx = {ch.index(z) for z in problem.scaled}
    terms = {}
    for (i,), coeff in contracted.terms:
        body = E.substitute(coeff, sub)
        if i not in scaled_idx:
            body = E.mul(body, E.power(u, -1))
        terms[(ch.names[i],)] = E.integral(body, HOMOTOPY_VAR)
    lam = BForm.build(ch, 1, terms)
    return PrimitiveDecomposition.from_primitive(lam)


def omega_t_matrix(problem: MoserProblem, t: float, env) -> np.ndarray:
    return (1 - t) * form_matrix(problem.omega0, env) + t * form_matrix(problem.omega1, env)


def moser_vector_field(
    problem: MoserProblem, decomp: PrimitiveDecomposition, t: float, env: Mapping[str, np.ndarray]
) -> np.ndarray:
    """b-frame components of ``v_t`` at the points of ``env``, shape (N, n)."""
    return _field(problem, decomp.primitive(), t, env)[0]


def _field(problem, lam: BForm, t: float, env):
    M = omega_t_matrix(problem, t, env)
    det = np.linalg.det(M)
    bad = np.abs(det) <= DET_TOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DegenerateFormError(t, {k: float(np.asarray(v)[i]) for k, v in env.items()})
    rhs = one_form_array(lam, env)
    v = np.linalg.solve(np.swapaxes(M, 1, 2), rhs[..., None])[..., 0]
    resid = float(np.max(np.abs(np.einsum("pij,pi->pj", M, v) - rhs))) if len(v) else 0.0
    return v, resid


@dataclass
class FlowResult:
    sample_points: dict
    mapped_points: dict
    residual: float
    steps: int
    radius: float
    solve_residual: float
    anchor_displacement: float
    certified: bool

    def to_dict(self) -> dict:
        return {
            "residual": float(f"{self.residual:.6e}"),
            "steps": self.steps,
            "samples": int(len(next(iter(self.sample_points.values())))),
            "radius": self.radius,
            "solve_residual": float(f"{self.solve_residual:.3e}"),
            "anchor_displacement": float(f"{self.anchor_displacement:.3e}"),
            "certified": self.certified,
        }


class _Flow:
    """Vectorized RK4 for ``da/dt = a v_a``, ``dz/dt = v_z``."""

    def __init__(self, problem: MoserProblem, lam: BForm):
        self.problem = problem
        self.lam = lam
        self.names = problem.chart.names
        self.ai = problem.chart.defining_index
        self.solve_residual = 0.0

    def velocity(self, t: float, y: np.ndarray) -> np.ndarray:
        env = {n: y[:, i] for i, n in enumerate(self.names)}
        v, r = _field(self.problem, self.lam, t, env)
        self.solve_residual = max(self.solve_residual, r)
        v[:, self.ai] *= y[:, self.ai]
        return v

    def run(self, y: np.ndarray, steps: int) -> np.ndarray:
        h = 1.0 / steps
        for s in range(steps):
            t = s * h
            k1 = self.velocity(t, y)
            k2 = self.velocity(t + h / 2, y + h / 2 * k1)
            k3 = self.velocity(t + h / 2, y + h / 2 * k2)
            k4 = self.velocity(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise MoserError("flow left the domain of definition")
        return y


def _to_array(chart: Chart, env) -> np.ndarray:
    return np.stack([np.asarray(env[n], dtype=float) for n in chart.names], axis=1)


def _in_domain(chart: Chart, y: np.ndarray) -> bool:
    return all(bool(np.all(c.contains(y[:, i]))) for i, c in enumerate(chart.coordinates))


def flow_map(
    problem: MoserProblem, decomp: PrimitiveDecomposition, points: Mapping[str, np.ndarray], steps: int = 200
) -> dict[str, np.ndarray]:
    """Time-one map at ``points`` (angles not wrapped)."""
    ch = problem.chart
    y = _Flow(problem, decomp.primitive()).run(_to_array(ch, points), steps)
    return {n: y[:, i] for i, n in enumerate(ch.names)}


def integrate_flow(
    problem: MoserProblem,
    decomp: PrimitiveDecomposition,
    steps: int = 1000,
    samples: int = 200,
    seed: int = 0,
    radius: float = BOX_RADIUS,
    tol: float = CERT_TOL,
) -> FlowResult:
    """Integrate the Moser flow and measure ``|phi^* omega1 - omega0|``.

    The Jacobian is taken by central differences in ``(z, log|a|)``, which
    are the b-frame coordinates, so the pulled back matrix is directly
    comparable with ``omega0``'s.
    """
    ch = problem.chart
    n = ch.dim
    ai = ch.defining_index
    lam = decomp.primitive()
    while True:
        rng = np.random.default_rng(seed)
        env = problem.local_samples(rng, samples, radius)
        base = _to_array(ch, env)
        h = JACOBIAN_STEP
        batch = [base]
        for j in range(n):
            for sgn in (1.0, -1.0):
                p = base.copy()
                if j == ai:
                    p[:, j] *= math.exp(sgn * h)
                else:
                    p[:, j] += sgn * h
                batch.append(p)
        anchor = _to_array(ch, problem.anchor_orbit(4))
        flow = _Flow(problem, lam)
        failure = None
        try:
            out = flow.run(np.vstack(batch + [anchor]), steps)
            ok = _in_domain(ch, out)
        except MoserError as exc:
            ok, failure = False, exc
        if ok:
            break
        radius /= 2
        if radius < MIN_RADIUS:
            if isinstance(failure, DegenerateFormError):
                raise failure
            raise MoserError("flow escapes the chart even in the minimal neighbourhood")
    N = samples
    img = out[:N]
    J = np.zeros((N, n, n))
    for j in range(n):
        plus = out[N * (1 + 2 * j) : N * (2 + 2 * j)]
        minus = out[N * (2 + 2 * j) : N * (3 + 2 * j)]
        d = plus - minus
        d[:, ai] = np.log(np.abs(plus[:, ai])) - np.log(np.abs(minus[:, ai]))
        J[:, :, j] = d / (2 * h)
    img_env = {nm: img[:, i] for i, nm in enumerate(ch.names)}
    M1 = form_matrix(problem.omega1, img_env)
    M0 = form_matrix(problem.omega0, env)
    pulled = np.einsum("pki,pkl,plj->pij", J, M1, J)
    residual = float(np.max(np.abs(pulled - M0)))
    anchor_out = out[-anchor.shape[0] :]
    disp = float(np.max(np.abs(anchor_out - anchor)))
    return FlowResult(
        sample_points=env,
        mapped_points=img_env,
        residual=residual,
        steps=steps,
        radius=radius,
        solve_residual=flow.solve_residual,
        anchor_displacement=disp,
        certified=residual < tol,
    )


# ---------------------------------------------------------------------------
# symmetry
# ---------------------------------------------------------------------------


def circle_elements(generator: Callable[[E.Expr], CoordinateMap], nodes: int = CIRCLE_NODES) -> list[CoordinateMap]:
    """Trapezoid nodes ``rho_{j/nodes}`` of a circle action."""
    from fractions import Fraction

    return [generator(E.Const(Fraction(j, nodes))) for j in range(nodes)]


def symmetrize(decomp: PrimitiveDecomposition, elements: Sequence[CoordinateMap]) -> PrimitiveDecomposition:
    """Average the primitive over a finite group or circle nodes."""
    if not elements:
        return decomp
    lam = decomp.primitive()
    total = BForm.zero(lam.chart, 1)
    for g in elements:
        total = total + pullback(g, lam).map_coefficients(lambda c: E.expand(E.fold_constants(c)))
    from fractions import Fraction

    mean = total.scale(E.Const(Fraction(1, len(elements))))
    return PrimitiveDecomposition.from_primitive(mean.map_coefficients(lambda c: E.fold_constants(E.expand(c))))


def equivariance_error(
    problem: MoserProblem,
    decomp: PrimitiveDecomposition,
    elements: Sequence[CoordinateMap],
    pairs: int = 50,
    steps: int = 200,
    seed: int = 0,
    radius: float = BOX_RADIUS / 2,
) -> float:
    """Max over sampled ``(g, p)`` of ``|g(phi(p)) - phi(g(p))|``."""
    ch = problem.chart
    rng = np.random.default_rng(seed)
    env = problem.local_samples(rng, pairs, radius)
    which = rng.integers(0, len(elements), pairs)
    worst = 0.0
    for gi in np.unique(which):
        sel = which == gi
        g = elements[int(gi)]
        pts = {k: v[sel] for k, v in env.items()}
        lhs = g(flow_map(problem, decomp, pts, steps), wrap=False)
        rhs = flow_map(problem, decomp, g(pts, wrap=False), steps)
        worst = max(worst, float(np.max(ch.distance(lhs, rhs))))
    return worst


def certify(
    problem: MoserProblem, steps: int = 1000, samples: int = 200, seed: int = 0, tol: float = CERT_TOL
) -> dict:
    """Residuals at ``steps`` and ``steps/2`` plus the observed order."""
    decomp = relative_primitive(problem, seed)
    if problem.symmetry:
        decomp = symmetrize(decomp, problem.symmetry)
    fine = integrate_flow(problem, decomp, steps, samples, seed, tol=tol)
    coarse = integrate_flow(problem, decomp, max(1, steps // 2), samples, seed, radius=fine.radius, tol=tol)
    return {
        "anchor_mismatch": float(f"{problem.anchor_mismatch():.6e}"),
        "d_identity_error": float(f"{decomp.d_identity_error(problem, seed):.3e}"),
        "fine": fine.to_dict(),
        "coarse": coarse.to_dict(),
        "observed_order": _order(coarse.residual, fine.residual),
        "pass": fine.certified,
    }


NOISE_FLOOR = 1e-9


def _order(coarse: float, fine: float) -> float | None:
    if fine <= 0 or coarse <= NOISE_FLOOR:
        return None
    return round(math.log2(coarse / fine), 3)
