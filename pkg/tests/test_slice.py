from fractions import Fraction

import numpy as np
import pytest

from bslice import builtins
from bslice.actions import TRIVIAL, GroupDescriptor
from bslice.bcalc import forms_equivalent, parse_form, pullback
from bslice.charts import CoordinateMap, map_power, maps_equivalent
from bslice.slice import ModelError, PipelineError, catalog_entry, model_for_orbit, standard_b_form


def run(name, anchor):
    scn = builtins.builtin(name)
    return model_for_orbit(scn.action(), scn.form(), scn.anchors[anchor], seed=scn.seed)


@pytest.mark.parametrize("c", [1, 2, Fraction(1, 3)])
def test_standard_b_form(c):
    w = standard_b_form(c)
    assert w.term_strings()[0].endswith("dt ^ dlog(a)")
    with pytest.raises(ModelError):
        standard_b_form(-c)


def test_catalog_entries():
    z3 = GroupDescriptor("cyclic", 0, 3)
    e = catalog_entry(z3, TRIVIAL, 4, 0)
    assert e.Y_chart.names == ("x1", "y1", "x2", "y2")
    t2 = GroupDescriptor("torus", 2, rank=2)
    e = catalog_entry(t2, TRIVIAL, 2, 2)
    assert e.Y_chart.names == ("q1", "q2", "p1", "p2", "x", "y")
    assert e.normal_names == ("x", "y", "p1", "p2")
    so3, so2 = GroupDescriptor("so3", 3), GroupDescriptor("so2", 1)
    assert catalog_entry(so3, so2, 2, 0).omega_MGS.term_strings() == ["(4*pi) * dtheta ^ dh", "du ^ dv"]
    with pytest.raises(ModelError):
        catalog_entry(t2, TRIVIAL, 0, 1)
    with pytest.raises(ModelError):
        catalog_entry(GroupDescriptor("circle", 1), TRIVIAL, 0, 0)


@pytest.mark.parametrize(
    "anchor, l, period, quotient",
    [
        ("regular", 1, 4, ["4 * dt ^ dlog(a)", "dx ^ dy"]),
        ("half", 2, 2, ["2 * dt ^ dlog(a)", "dx ^ dy"]),
        ("exceptional", 4, 1, ["dt ^ dlog(a)", "dx ^ dy"]),
    ],
)
def test_torus_example_models(anchor, l, period, quotient):
    res = run("torus_example", anchor)
    m = res.model
    assert (m.k, m.l, m.model_period, m.c_prime) == (4, l, period, 4)
    assert m.omega_quotient.term_strings() == quotient
    assert maps_equivalent(map_power(m.deck_generator, l), CoordinateMap.identity(m.chart))
    assert forms_equivalent(pullback(m.deck_generator, m.omega_tilde0), m.omega_tilde0)
    assert res.moser_task is not None


def test_curled_torus_origin_is_z2_model():
    m = run("curled_torus", "origin").model
    assert m.l == 2 and m.model_period == Fraction(1, 2)
    assert np.allclose(m.sigma, -np.eye(2))
    assert m.to_dict()["deck_generator"] == {"a": "a", "t": "(1/2) + t", "x": "(-1)*x", "y": "(-1)*y"}


def test_s2xs2_diagonal_quotient_form():
    res = run("s2xs2", "diagonal")
    ch = res.model.chart
    expect = parse_form(["dt ^ dlog(a)", "4*pi * dtheta ^ dh", "du ^ dv"], ch)
    assert forms_equivalent(res.model.omega_quotient, expect)
    assert res.moser_task is None and res.notes


def test_s2xs2_antipodal_fails_at_model_stage():
    with pytest.raises(PipelineError) as err:
        run("s2xs2", "antipodal")
    assert err.value.stage == "model"


def test_tstar_g_free_torus_orbit():
    m = run("tstar_g", "base").model
    assert m.entry.H == "T1" and m.entry.m_star_dim == 1
    assert m.omega_quotient.term_strings() == ["dt ^ dlog(a)", "dq1 ^ dp1"]


def test_period_mismatch_is_reported():
    scn = builtins.builtin("curled_torus")
    w = scn.form() + parse_form(["(1/2) * dt ^ dlog(p)"], scn.form().chart)
    with pytest.raises(PipelineError) as err:
        model_for_orbit(scn.action(), w, scn.anchors["origin"])
    assert err.value.stage == "normal form"
