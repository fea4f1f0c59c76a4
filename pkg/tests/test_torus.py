from fractions import Fraction

import numpy as np
import pytest

from bslice import builtins
from bslice import expr as E
from bslice.bcalc import forms_equivalent, parse_form
from bslice.charts import Chart, Coordinate, CoordinateMap, matrix_map
from bslice.torus import (
    CollarModel,
    DescentError,
    FiniteCover,
    MappingTorus,
    NormalFormError,
    TorusError,
    check_modular_contract,
    lift_form,
    modular_period,
    modular_vector_field,
    quotient_form,
    rationalize,
    restrict_to_hypersurface,
    simplify_simply_connected,
    verify_simplification,
)

LEAF = Chart((Coordinate.real("x"), Coordinate.real("y")))
BETA = parse_form(["dx ^ dy"], LEAF)


def torus(matrix, order, period=1, **kw):
    return MappingTorus(LEAF, BETA, matrix_map(LEAF, ("x", "y"), matrix), Fraction(period), order, **kw)


ROT = torus([[0, -1], [1, 0]], 4)


def test_validate_and_discover_order():
    assert ROT.validate() == []
    assert ROT.discover_order() == 4
    wrong = torus([[0, -1], [1, 0]], 2)
    assert any("not the identity" in p for p in wrong.validate())
    over = torus([[-1, 0], [0, -1]], 4)
    assert any("order 2" in p for p in over.validate())


def test_validate_rejects_non_symplectic_monodromy():
    flip = torus([[1, 0], [0, -1]], 2)
    assert any("does not preserve the leaf form" in p for p in flip.validate())


def test_constructor_checks():
    with pytest.raises(TorusError):
        torus([[1, 0], [0, 1]], 1, period=0)
    odd = Chart((Coordinate.real("x"),))
    with pytest.raises(TorusError):
        MappingTorus(odd, BETA, CoordinateMap.identity(odd), Fraction(1), 1)


def test_reduce_applies_inverse_monodromy():
    p = {"t": np.array([1.25, -0.5]), "x": np.array([1.0, 1.0]), "y": np.array([0.0, 0.0]), "a": np.zeros(2)}
    r = ROT.reduce(p)
    assert np.allclose(r["t"], [0.25, 0.5])
    # (1.25, v) ~ (0.25, phi^{-1} v); phi^{-1}(1, 0) = (0, -1)
    assert np.allclose([r["x"][0], r["y"][0]], [0.0, -1.0])
    assert np.allclose([r["x"][1], r["y"][1]], [0.0, 1.0])


def test_normal_collar_form_and_modular_field():
    collar = CollarModel.normal(ROT)
    assert collar.check_well_defined() is None
    assert modular_period(collar) == 1
    v = modular_vector_field(collar)
    rep = check_modular_contract(collar, v)
    assert rep["ok"] and rep["alpha_v_error"] == 0.0


def test_non_invariant_form_is_flagged():
    ch = ROT.collar_chart
    w = parse_form(["dt ^ dlog(a)", "dx ^ dy", "x * dt ^ dx"], ch)
    assert CollarModel(ROT, w).check_well_defined() is not None


def test_negative_period_orientation():
    ch = ROT.collar_chart
    w = parse_form(["(-1) * dt ^ dlog(a)", "dx ^ dy"], ch)
    with pytest.raises(NormalFormError):
        modular_period(CollarModel(ROT, w))


def test_restrict_removable_singularity():
    ch = builtins.builtin("torus_example").tori["Z"].collar_chart
    e = E.mul(E.Var("s"), E.power(E.sin(E.Var("s")), -1))
    assert restrict_to_hypersurface(e, ch) == E.ONE


def test_rationalize():
    assert rationalize(0.25) == Fraction(1, 4)
    assert rationalize(1 / 3 + 1e-14) == Fraction(1, 3)
    with pytest.raises(NormalFormError):
        rationalize(np.pi, tol=1e-15)


@pytest.mark.parametrize("k", [4, 8])
def test_cover_deck_group(k):
    cover = FiniteCover(ROT, k)
    assert cover.check_group_action()
    assert cover.check_projection_invariance()
    assert cover.check_faithful()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_cover_must_trivialize_monodromy(k):
    with pytest.raises(TorusError):
        FiniteCover(ROT, k)


def test_quotient_roundtrip_and_descent_error():
    cover = FiniteCover(ROT, 4)
    w = CollarModel.normal(ROT).omega
    lifted = lift_form(cover, w)
    assert forms_equivalent(quotient_form(cover, lifted), w)
    bad = lifted + parse_form(["x * dt ^ dlog(a)"], cover.chart)
    with pytest.raises(DescentError) as err:
        quotient_form(cover, bad)
    assert err.value.m in (1, 2, 3)


def test_simplify_closed_eta():
    simple = torus([[1, 0], [0, 1]], 1, simply_connected=True)
    ch = simple.collar_chart
    w = parse_form(["2 * dt ^ dlog(a)", "2*x * dt ^ dx", "dt ^ dy", "dx ^ dy"], ch)
    collar = CollarModel(simple, w)
    res = simplify_simply_connected(collar)
    assert res.c == 2 and res.symbolic
    assert verify_simplification(collar, res) is None
    assert forms_equivalent(res.omega_normal, simple.normal_collar_form(2))


def test_simplify_requires_simple_connectivity():
    with pytest.raises(NormalFormError):
        simplify_simply_connected(CollarModel.normal(ROT))
    assert simplify_simply_connected(CollarModel.normal(ROT), local=True).c == 1


def test_simplify_rejects_non_closed_eta():
    simple = torus([[1, 0], [0, 1]], 1, simply_connected=True)
    w = parse_form(["dt ^ dlog(a)", "y * dt ^ dx", "dx ^ dy"], simple.collar_chart)
    with pytest.raises(NormalFormError):
        simplify_simply_connected(CollarModel(simple, w))


def test_non_constant_coefficient_with_constant_restriction():
    ex = builtins.builtin("torus_example")
    Z = ex.tori["Z"]
    collar = CollarModel(Z, ex.form())
    res = simplify_simply_connected(collar, local=True)
    assert res.c == 1 and not res.symbolic
    assert verify_simplification(collar, res) is None
