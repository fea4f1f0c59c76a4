"""Slice models ``(T*S^1 x Y) / Z_l`` and the orbit normal-form pipeline.

``Y`` comes from a small catalog indexed by the leaf-preserving group ``H``
and the stabilizer ``H_z``.  Models are chart-level: the cover carries
``c' dt ^ da/a + omega_MGS`` on ``(t, Y, a)`` and ``Z_l`` acts by
``t -> t + 1/l`` together with the linear map ``sigma`` on the normal
coordinates of ``Y``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import expr as E
from .actions import (
    GroupAction,
    GroupDescriptor,
    IsotropyData,
    isotropy_decomposition,
    product_decomposition,
)
from .bcalc import BForm, forms_witness, is_b_symplectic, parse_form, pullback, wedge
from .charts import Chart, Coordinate, CoordinateMap, maps_equivalent, map_power
from .torus import (
    CollarModel,
    FiniteCover,
    MappingTorus,
    lift_form,
    modular_period,
    quotient_form,
    rationalize,
    simplify_simply_connected,
)

TIME = "t"
DEFINING = "a"


class ModelError(ValueError):
    pass


class PipelineError(ValueError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


@dataclass(frozen=True)
class MGSCatalogEntry:
    H: str
    H_z: str
    Y_chart: Chart
    omega_MGS: BForm
    m_star_dim: int
    V_dim: int
    normal_names: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "H": self.H,
            "H_z": self.H_z,
            "Y_chart": [c.describe() for c in self.Y_chart.coordinates],
            "omega_MGS": self.omega_MGS.term_strings(),
            "m_star_dim": self.m_star_dim,
            "V_dim": self.V_dim,
        }


def _darboux_names(dim: int) -> list[str]:
    if dim == 2:
        return ["x", "y"]
    return [f"{p}{i}" for i in range(1, dim // 2 + 1) for p in ("x", "y")]


def catalog_entry(H: GroupDescriptor, H_z: GroupDescriptor, V_dim: int, m_dim: int) -> MGSCatalogEntry:
    """Explicit ``(Y, omega_MGS)`` for the supported ``(H, H_z)`` pairs."""
    if H.kind in ("trivial", "cyclic") and H_z.kind in ("trivial", "cyclic"):
        if m_dim:
            raise ModelError(f"finite H with {m_dim} transverse non-symplectic directions")
        names = _darboux_names(V_dim)
        ch = Chart(tuple(Coordinate.real(n) for n in names))
        terms = [f"d{names[2 * i]}^d{names[2 * i + 1]}" for i in range(V_dim // 2)]
        return MGSCatalogEntry(H.name, H_z.name, ch, parse_form(terms, ch), 0, V_dim, tuple(names))
    if H.kind == "torus" and H_z.kind == "trivial":
        r = H.rank
        if m_dim != r:
            raise ModelError(f"free torus orbit should have {r} momentum directions, found {m_dim}")
        qs = [f"q{i}" for i in range(1, r + 1)]
        ps = [f"p{i}" for i in range(1, r + 1)]
        vs = _darboux_names(V_dim) if V_dim else []
        ch = Chart(
            tuple(Coordinate.angle(q, 1) for q in qs)
            + tuple(Coordinate.real(p) for p in ps)
            + tuple(Coordinate.real(v) for v in vs)
        )
        terms = [f"d{q}^d{p}" for q, p in zip(qs, ps)]
        terms += [f"d{vs[2 * i]}^d{vs[2 * i + 1]}" for i in range(V_dim // 2)]
        return MGSCatalogEntry(H.name, H_z.name, ch, parse_form(terms, ch), r, V_dim, tuple(vs + ps))
    if H.kind == "so3" and H_z.kind == "so2":
        if V_dim + m_dim != 2:
            raise ModelError("SO(3)/SO(2) entry needs a 2-dimensional normal plane")
        ch = Chart(
            (Coordinate.angle("theta", 1), Coordinate.real("h", -1, 1), Coordinate.real("u"), Coordinate.real("v"))
        )
        form = parse_form(["4*pi*dtheta^dh", "du^dv"], ch)
        return MGSCatalogEntry(H.name, H_z.name, ch, form, m_dim, V_dim, ("u", "v"))
    if H.kind == "so3" and H_z.kind == "trivial":
        if V_dim or m_dim != 1:
            raise ModelError("SO(3) free orbit entry needs V = 0 and one momentum direction")
        ch = Chart(tuple(Coordinate.real(n) for n in ("q1", "q2", "q3", "p")))
        form = parse_form(["dq1^dq2", "dq3^dp"], ch)
        return MGSCatalogEntry(H.name, H_z.name, ch, form, 1, 0, ("p",))
    raise ModelError(f"no catalog entry for H = {H.name}, H_z = {H_z.name}")


def standard_b_form(c, chart: Chart | None = None) -> BForm:
    """``omega_c = c dt ^ da/a``."""
    c = Fraction(c)
    if c <= 0:
        raise ModelError("modular period must be positive")
    chart = chart or Chart((Coordinate.angle(TIME, 1), Coordinate.defining(DEFINING)))
    return wedge(BForm.frame(chart, TIME, E.Const(c)), BForm.frame(chart, DEFINING))


def _matrix_entry(x: float) -> E.Expr:
    try:
        return E.Const(rationalize(float(x), tol=1e-7))
    except ValueError:
        return E.as_expr(float(x))


@dataclass
class SliceModel:
    c: Fraction
    k: int
    l: int
    variant: int
    entry: MGSCatalogEntry
    sigma: np.ndarray
    chart: Chart
    omega_tilde0: BForm
    deck_generator: CoordinateMap
    omega_quotient: BForm
    quotient_torus: MappingTorus

    @property
    def c_prime(self) -> Fraction:
        return self.c * self.k

    @property
    def model_period(self) -> Fraction:
        return self.c * self.k / self.l

    def deck(self, m: int) -> CoordinateMap:
        return map_power(self.deck_generator, m % self.l)

    def to_dict(self) -> dict:
        return {
            "c": str(self.c),
            "k": self.k,
            "l": self.l,
            "c_prime": str(self.c_prime),
            "model_period": str(self.model_period),
            "variant": self.variant,
            "Y": self.entry.to_dict(),
            "chart": [c.describe() for c in self.chart.coordinates],
            "omega_tilde0": self.omega_tilde0.term_strings(),
            "omega_quotient": self.omega_quotient.term_strings(),
            "deck_generator": {
                n: E.to_string(e) for n, e in zip(self.chart.names, self.deck_generator.components)
            },
            "sigma": [[round(float(x), 9) + 0.0 for x in row] for row in self.sigma],
        }


def assemble_model(
    c, k: int, iso: IsotropyData, entry: MGSCatalogEntry, variant: int = 1, seed: int = 0
) -> SliceModel:
    """Build ``omega_tilde0 = omega_{kc} + omega_MGS`` with its ``Z_l`` deck action."""
    c = Fraction(c)
    l = iso.l
    if k % l:
        raise ModelError(f"l = {l} does not divide k = {k}")
    sigma = np.asarray(iso.sigma, dtype=float)
    if sigma.shape != (len(entry.normal_names),) * 2:
        raise ModelError(
            f"isotropy acts on a {sigma.shape[0]}-dimensional normal space, catalog expects {len(entry.normal_names)}"
        )
    leaf = entry.Y_chart
    mono = {
        n: E.add(*(E.mul(_matrix_entry(sigma[i, j]), E.Var(entry.normal_names[j])) for j in range(len(entry.normal_names))))
        for i, n in enumerate(entry.normal_names)
    }
    # the model as a mapping torus of period kc/l with monodromy sigma; its
    # l-fold cover carries omega_tilde0 and the deck generator mu_{-1}
    qt = MappingTorus(
        leaf,
        entry.omega_MGS,
        CoordinateMap.from_mapping(leaf, leaf, mono),
        c * k / l,
        l,
        time=TIME,
        defining=DEFINING,
    )
    # sigma may have order a proper divisor of l; the time shift still makes
    # the deck generator of order exactly l
    problems = [p for p in qt.validate(seed) if not p.startswith("monodromy has order")]
    if problems:
        raise ModelError("deck action on Y: " + "; ".join(problems))
    cover = FiniteCover(qt, l)
    omega0 = cover.cover_torus.normal_collar_form()
    gen = dict(mono)
    if l > 1:
        gen[TIME] = E.add(E.Var(TIME), E.Const(Fraction(1, l)))
    generator = CoordinateMap.from_mapping(cover.chart, cover.chart, gen)
    if not maps_equivalent(map_power(generator, l), CoordinateMap.identity(cover.chart), seed=seed):
        raise ModelError("deck generator does not have order l")
    wit = forms_witness(pullback(generator, omega0), omega0, seed=seed)
    if wit is not None:
        raise ModelError(f"deck generator does not preserve omega_tilde0: {wit}")
    omega_q = quotient_form(cover, omega0, seed=seed)
    if modular_period(CollarModel(qt, omega_q), seed) != c * k / l:
        raise ModelError("quotient model period mismatch")
    return SliceModel(
        c=c,
        k=k,
        l=l,
        variant=variant,
        entry=entry,
        sigma=sigma,
        chart=cover.chart,
        omega_tilde0=omega0,
        deck_generator=generator,
        omega_quotient=omega_q,
        quotient_torus=qt,
    )


@dataclass
class OrbitAnalysis:
    model: SliceModel
    isotropy: IsotropyData
    decomposition: dict
    normal_form: dict
    moser_task: object | None
    notes: list = field(default_factory=list)


def model_for_orbit(
    action: GroupAction, omega: BForm, z: Mapping[str, float], seed: int = 0
) -> OrbitAnalysis:
    """Cover, decompose, compute isotropy and assemble the slice model at ``z``.

    The returned Moser task compares the lifted scenario form with the model
    transported to the cover chart by a linear Darboux chart at ``z``.
    """
    torus = action.torus
    stage = "decomposition"
    try:
        dec = product_decomposition(action, seed)
        stage = "cover"
        cover = FiniteCover(torus, dec.k)
        lifted = lift_form(cover, omega)
        stage = "normal form"
        simp = simplify_simply_connected(
            CollarModel(cover.cover_torus, lifted), base_point=z, local=True, seed=seed
        )
        c = simp.c / dec.k
        if c != torus.period:
            raise ModelError(f"form has modular period {c}, torus declares {torus.period}")
        stage = "isotropy"
        iso = isotropy_decomposition(action, z, seed=seed)
        stage = "catalog"
        entry = catalog_entry(dec.factor, iso.stabilizer, iso.V_dim, iso.m_dim)
        stage = "model"
        model = assemble_model(c, dec.k, iso, entry, 1 if dec.variant == "product" else 2, seed)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - stage label is the point
        raise PipelineError(stage, exc) from exc
    normal = {
        "c_prime": str(simp.c),
        "defining_function": E.to_string(simp.defining_function),
        "symbolic": simp.symbolic,
        "omega_normal": simp.omega_normal.term_strings(),
    }
    task = None
    notes = []
    if dec.factor.kind == "trivial":
        task = _moser_task(torus, lifted, model, iso, z)
    else:
        notes.append("Moser certification is only emitted when the leaf factor is trivial")
    return OrbitAnalysis(model, iso, dec.to_dict(), normal, task, notes)


def darboux_chart_map(source: Chart, model: SliceModel, iso: IsotropyData, z: Mapping[str, float]) -> CoordinateMap:
    """Linear map from the cover chart to the model chart, centered at ``z``."""
    leaf_names = [n for n in source.names if n not in (TIME, source.defining_coordinate)]
    L = np.linalg.pinv(iso.normal_basis)
    comps = {TIME: E.Var(TIME), DEFINING: E.Var(source.defining_coordinate)}
    for i, n in enumerate(model.entry.normal_names):
        comps[n] = E.add(
            *(E.mul(_matrix_entry(L[i, j]), E.add(E.Var(q), E.as_expr(-float(z[q])))) for j, q in enumerate(leaf_names))
        )
    return CoordinateMap.from_mapping(source, model.chart, comps)


def _moser_task(torus: MappingTorus, lifted: BForm, model: SliceModel, iso: IsotropyData, z):
    from .moser import MoserProblem

    psi = darboux_chart_map(lifted.chart, model, iso, z)
    omega0 = pullback(psi, model.omega_tilde0)
    anchor = {n: float(z[n]) for n in torus.leaf_names}
    anchor[lifted.chart.defining_coordinate] = 0.0
    return MoserProblem(omega0, lifted, anchor, orbit=(TIME,))
