import numpy as np
import pytest

from bslice import expr as E
from bslice.bcalc import (
    BForm,
    BVectorField,
    ChartMismatchError,
    FormError,
    decompose,
    exterior_derivative,
    form_matrix,
    forms_equivalent,
    interior_product,
    is_b_symplectic,
    parse_form,
    pullback,
    wedge,
)
from bslice.charts import Chart, Coordinate, CoordinateMap
from bslice.parsing import parse

from helpers import COLLAR, random_form

OMEGA = parse_form(["dt ^ dlog(a)", "dx ^ dy"], COLLAR)


def test_smooth_da_is_stored_on_the_b_frame():
    assert parse_form(["da"], COLLAR).term_strings() == ["a * dlog(a)"]


def test_wedge_is_graded_commutative():
    rng = np.random.default_rng(3)
    for _ in range(20):
        u, v = random_form(rng, 1), random_form(rng, 2)
        assert forms_equivalent(wedge(u, v), wedge(v, u))
        p = random_form(rng, 1)
        assert forms_equivalent(wedge(u, p), -wedge(p, u))


def test_exterior_derivative_of_function():
    f = BForm.function(COLLAR, parse("x^2*a", COLLAR))
    df = exterior_derivative(f)
    assert forms_equivalent(df, parse_form(["2*x*a * dx", "x^2*a * dlog(a)"], COLLAR))


def test_theta_a_is_closed():
    assert exterior_derivative(BForm.frame(COLLAR, "a")).is_zero()


def test_pullback_of_theta_under_rescaling():
    # F^a = a e^x gives theta_a + dx
    F = CoordinateMap.from_mapping(COLLAR, COLLAR, {"a": E.mul(E.Var("a"), E.exp(E.Var("x")))})
    got = pullback(F, BForm.frame(COLLAR, "a"))
    assert forms_equivalent(got, parse_form(["dx", "dlog(a)"], COLLAR))


def test_pullback_commutes_with_d():
    rng = np.random.default_rng(5)
    F = CoordinateMap.from_mapping(
        COLLAR,
        COLLAR,
        {"x": parse("x + y^2", COLLAR), "a": parse("a*(2 + sin(2*pi*t))", COLLAR)},
    )
    for _ in range(10):
        w = random_form(rng, 1)
        assert forms_equivalent(pullback(F, exterior_derivative(w)), exterior_derivative(pullback(F, w)))


def test_interior_product_and_matrix_convention():
    X = BVectorField.from_mapping(COLLAR, {"t": 1})
    assert interior_product(X, OMEGA).term_strings() == ["dlog(a)"]
    env = COLLAR.sample(np.random.default_rng(0), 3)
    M = form_matrix(OMEGA, env)
    assert M.shape == (3, 4, 4)
    assert np.allclose(M[:, 0, 3], 1.0) and np.allclose(M[:, 3, 0], -1.0)
    # (i_X w)_j = (M^T X)_j
    assert np.allclose(np.einsum("pij,i->pj", M, [1, 0, 0, 0])[:, 3], 1.0)


def test_decompose_into_defining_forms():
    alpha, beta = decompose(OMEGA)
    assert alpha.term_strings() == ["dt"]
    assert beta.term_strings() == ["dx ^ dy"]


def test_is_b_symplectic():
    assert is_b_symplectic(OMEGA).ok
    deg = is_b_symplectic(parse_form(["dt ^ dlog(a)", "x * dx ^ dy"], COLLAR))
    assert deg.closed and not deg.nondegenerate
    assert deg.witness["point"]["x"] == 0.0
    assert not is_b_symplectic(parse_form(["dt ^ dlog(a)", "a * dx ^ dy"], COLLAR)).closed


def test_odd_dimension_rejected():
    ch = Chart((Coordinate.angle("t"), Coordinate.defining("a"), Coordinate.real("x")))
    with pytest.raises(FormError):
        is_b_symplectic(parse_form(["dt ^ dlog(a)"], ch))


def test_chart_mismatch():
    other = Chart((Coordinate.real("x"), Coordinate.real("y")))
    with pytest.raises(ChartMismatchError):
        OMEGA + parse_form(["dx ^ dy"], other)
