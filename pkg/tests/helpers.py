"""Seeded random expressions and b-forms for property tests."""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from bslice import expr as E
from bslice.bcalc import BForm
from bslice.charts import Chart, Coordinate

COLLAR = Chart(
    (
        Coordinate.angle("t"),
        Coordinate.real("x"),
        Coordinate.real("y"),
        Coordinate.defining("a"),
    )
)


def random_coefficient(rng: np.random.Generator, chart: Chart = COLLAR) -> E.Expr:
    """Small random expression: a rational constant times one or two atoms."""
    names = chart.names
    atoms = []
    for _ in range(int(rng.integers(1, 3))):
        name = names[int(rng.integers(len(names)))]
        v = E.Var(name)
        kind = int(rng.integers(5))
        if chart.coordinate(name).kind == "angle":
            trig = E.sin if kind % 2 else E.cos
            atoms.append(trig(E.mul(E.const(2, 1), v)))
        elif kind == 0:
            atoms.append(v)
        elif kind == 1:
            atoms.append(E.power(v, int(rng.integers(2, 4))))
        elif kind == 2:
            atoms.append(E.sin(E.mul(E.const(2, 1), v)))
        elif kind == 3:
            atoms.append(E.cos(v))
        else:
            atoms.append(E.exp(E.mul(E.const(Fraction(1, 2)), v)))
    c = E.const(Fraction(int(rng.integers(-5, 6)) or 1, int(rng.integers(1, 4))))
    return E.add(E.mul(c, *atoms), E.const(int(rng.integers(-2, 3))))


def random_form(rng: np.random.Generator, degree: int, chart: Chart = COLLAR, max_terms: int = 3) -> BForm:
    keys = list(itertools.combinations(range(chart.dim), degree))
    n = min(len(keys), int(rng.integers(1, max_terms + 1)))
    pick = rng.choice(len(keys), size=n, replace=False)
    return BForm.build(chart, degree, {keys[int(i)]: random_coefficient(rng, chart) for i in pick})
