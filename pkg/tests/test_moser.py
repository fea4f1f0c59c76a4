import numpy as np
import pytest

from bslice import expr as E
from bslice.bcalc import exterior_derivative, forms_equivalent, parse_form, pullback
from bslice.charts import CoordinateMap
from bslice.moser import (
    DegenerateFormError,
    MoserError,
    MoserProblem,
    PrimitiveDecomposition,
    certify,
    circle_elements,
    flow_map,
    integrate_flow,
    relative_primitive,
    symmetrize,
)
from bslice.parsing import parse

from helpers import COLLAR

OMEGA0 = parse_form(["dt ^ dlog(a)", "dx ^ dy"], COLLAR)
ORIGIN = {"t": 0.0, "x": 0.0, "y": 0.0}
FLIP = CoordinateMap.from_mapping(COLLAR, COLLAR, {"x": parse("-x", COLLAR), "y": parse("-y", COLLAR)})


def problem(*extra, anchor=ORIGIN, **kw):
    omega1 = OMEGA0 + parse_form(list(extra), COLLAR) if extra else OMEGA0
    return MoserProblem(OMEGA0, omega1, anchor, **kw)


def test_primitive_satisfies_d_identity():
    p = problem("x * dx ^ dy", "(1/10)*y * dy ^ dt", "x^2 * dt ^ dx")
    decomp = relative_primitive(p)
    assert forms_equivalent(exterior_derivative(decomp.primitive()), p.omega0 - p.omega1)
    assert decomp.d_identity_error(p) < 1e-12


def test_primitive_of_singular_difference():
    p = problem("x * dx ^ dlog(a)", "(1/10)*y * dy ^ dlog(a)")
    decomp = relative_primitive(p)
    assert decomp.d_identity_error(p) < 1e-12


def test_decomposition_roundtrip():
    lam = parse_form(["x * dlog(a)", "y * dx"], COLLAR)
    d = PrimitiveDecomposition.from_primitive(lam)
    assert E.to_string(d.g) == "(-1)*x"
    assert forms_equivalent(d.primitive(), lam)


def test_anchor_orbit_block_must_vanish():
    with pytest.raises(MoserError):
        relative_primitive(problem("(1/10) * dt ^ dlog(a)"))


def test_anchor_must_lie_on_hypersurface():
    with pytest.raises(MoserError):
        problem("dx ^ dy", anchor={**ORIGIN, "a": 0.5})


def test_non_closed_difference_rejected():
    with pytest.raises(MoserError):
        relative_primitive(problem("x * dt ^ dy"))


def test_identical_forms_give_identity_flow():
    p = problem()
    res = integrate_flow(p, relative_primitive(p), steps=4, samples=16)
    assert res.residual < 1e-9 and res.anchor_displacement == 0.0


def test_z2_average_oracle():
    # eta = x dy is already invariant; x dx + dy loses its odd part
    lam = parse_form(["x * dy"], COLLAR)
    d = symmetrize(PrimitiveDecomposition.from_primitive(lam), [CoordinateMap.identity(COLLAR), FLIP])
    assert forms_equivalent(d.primitive(), lam)
    lam = parse_form(["x * dx", "dy"], COLLAR)
    d = symmetrize(PrimitiveDecomposition.from_primitive(lam), [CoordinateMap.identity(COLLAR), FLIP])
    assert forms_equivalent(d.primitive(), parse_form(["x * dx"], COLLAR))
    assert forms_equivalent(pullback(FLIP, d.primitive()), d.primitive())


ROTATION = {
    "x": parse("cos(2*pi*s)*x - sin(2*pi*s)*y", COLLAR, extra_names=("s",)),
    "y": parse("sin(2*pi*s)*x + cos(2*pi*s)*y", COLLAR, extra_names=("s",)),
}


def rot(s):
    return CoordinateMap.from_mapping(COLLAR, COLLAR, {k: E.substitute(v, {"s": s}) for k, v in ROTATION.items()})


def test_circle_average_is_rotation_invariant():
    lam = parse_form(["x^2 * dt"], COLLAR)
    d = symmetrize(PrimitiveDecomposition.from_primitive(lam), circle_elements(rot))
    assert forms_equivalent(d.primitive(), parse_form(["(1/2)*(x^2 + y^2) * dt"], COLLAR))


def test_degenerate_path_is_reported():
    p = MoserProblem(OMEGA0, parse_form(["dt ^ dlog(a)", "(-1) * dx ^ dy"], COLLAR), ORIGIN)
    with pytest.raises(DegenerateFormError) as err:
        integrate_flow(p, relative_primitive(p), steps=4, samples=8)
    assert 0 < err.value.t < 1


def test_rk4_order_is_visible_on_a_stiff_problem():
    p = problem("(50*x^2 + 50*y^3) * dx ^ dy", "(1/10)*x * dx ^ dt", "(1/10)*y * dy ^ dt")
    rep = certify(p, steps=16, samples=100)
    assert rep["fine"]["residual"] < rep["coarse"]["residual"]
    assert rep["observed_order"] >= 3.0


def test_flow_fixes_anchor_orbit():
    p = problem("(1/10)*x * dx ^ dt", "(1/10)*y * dy ^ dt")
    pts = p.anchor_orbit(5)
    pts["a"] = np.zeros(5)
    out = flow_map(p, relative_primitive(p), pts, steps=20)
    assert np.allclose(out["x"], 0.0) and np.allclose(out["y"], 0.0)
