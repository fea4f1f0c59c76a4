import numpy as np
import pytest

from bslice import builtins
from bslice.actions import (
    ActionError,
    CircleAction,
    CyclicAction,
    GroupAction,
    SO3DiagonalAction,
    TransversalityError,
    _canonical_rotation,
    archimedes_to_vec,
    check_invariance,
    check_transversality,
    check_well_defined,
    isotropy_decomposition,
    kabsch,
    leaf_fixing_subgroup,
    product_decomposition,
    rodrigues,
    symplectic_gram_schmidt,
    symplectic_normal_space,
    vec_to_archimedes,
)
from bslice.bcalc import parse_form
from bslice.charts import matrix_map
from bslice.parsing import parse


@pytest.fixture(scope="module")
def torus_example():
    return builtins.builtin("torus_example")


@pytest.fixture(scope="module")
def s2xs2():
    return builtins.builtin("s2xs2")


def test_rodrigues_is_rotation():
    R = rodrigues([1.0, 2.0, 2.0], 0.7)
    assert np.allclose(R @ R.T, np.eye(3)) and np.isclose(np.linalg.det(R), 1.0)
    assert np.allclose(R @ np.array([1.0, 2.0, 2.0]), [1.0, 2.0, 2.0])


def test_archimedes_roundtrip():
    th, h = np.array([0.1, 0.7]), np.array([0.3, -0.9])
    v = archimedes_to_vec(th, h)
    assert np.allclose(np.linalg.norm(v, axis=-1), 1.0)
    th2, h2 = vec_to_archimedes(v)
    assert np.allclose(th2, th) and np.allclose(h2, h)


def test_kabsch_recovers_rotation():
    rng = np.random.default_rng(1)
    R = rodrigues(rng.normal(size=3), 1.1)
    P = rng.normal(size=(5, 3))
    assert np.allclose(kabsch(P, P @ R.T), R)


def test_canonical_rotation_on_rank_one_configuration():
    x = np.array([0.0, 0.6, 0.8])
    assert np.allclose(_canonical_rotation(np.stack([x, x]), np.stack([x, x])), np.eye(3))
    R = _canonical_rotation(np.stack([x, x]), np.stack([-x, -x]))
    assert np.allclose(R @ x, -x) and np.isclose(np.linalg.det(R), 1.0)


def test_product_decomposition(torus_example, s2xs2):
    dec = product_decomposition(torus_example.action())
    assert (dec.k, dec.gamma, dec.factor.name) == (4, "Z4", "trivial")
    dec = product_decomposition(s2xs2.action())
    assert (dec.k, dec.factor.name) == (2, "SO3")


def test_circle_must_advance_by_integer_multiple(torus_example):
    Z = torus_example.tori["Z"]
    ch = Z.collar_chart
    half = CircleAction(ch, {"t": parse("t + s/2", ch, extra_names=("s",))})
    with pytest.raises(TransversalityError):
        half.base_degree
    tangent = GroupAction(Z, CircleAction(ch, {"phi": parse("phi + s", ch, extra_names=("s",))}))
    with pytest.raises(TransversalityError):
        check_transversality(tangent)


def test_incompatible_degree_is_rejected(torus_example):
    # degree 2 with an order-4 monodromy: rho_1 is not the identity
    Z = torus_example.tori["Z"]
    ch = Z.collar_chart
    g = GroupAction(Z, CircleAction(ch, {"t": parse("t + 2*s", ch, extra_names=("s",))}))
    assert not check_well_defined(g)
    with pytest.raises(ActionError):
        leaf_fixing_subgroup(g)


def test_invariance_witness(torus_example):
    g = torus_example.action()
    assert check_invariance(g, torus_example.form()) is None
    ch = g.torus.collar_chart
    bad = torus_example.form() + parse_form(["sin(2*pi*t) * dphi ^ dpsi"], ch)
    assert check_invariance(g, bad) is not None


def test_cyclic_action_order_is_checked(torus_example):
    leaf = torus_example.tori["Z"].leaf_chart
    rot = matrix_map(leaf, ("phi", "psi"), [[0, -1], [1, 0]])
    CyclicAction(rot, 4)
    with pytest.raises(ActionError):
        CyclicAction(rot, 3)


def test_so3_requires_unit_period_angles(torus_example):
    leaf = builtins.builtin("curled_torus").tori["Z"].leaf_chart
    with pytest.raises(ActionError):
        SO3DiagonalAction(leaf, [("x", "y")])


@pytest.mark.parametrize(
    "anchor, l, sigma",
    [
        ("regular", 1, [[1, 0], [0, 1]]),
        ("half", 2, [[-1, 0], [0, -1]]),
        ("exceptional", 4, [[0, -1], [1, 0]]),
    ],
)
def test_torus_example_isotropy(torus_example, anchor, l, sigma):
    iso = isotropy_decomposition(torus_example.action(), torus_example.anchors[anchor])
    assert iso.k == 4 and iso.l == l and iso.m0 == 4 // l
    assert iso.V_dim == 2 and iso.m_dim == 0
    assert np.allclose(iso.sigma, sigma, atol=1e-7)


def test_s2xs2_diagonal_isotropy(s2xs2):
    iso = isotropy_decomposition(s2xs2.action(), s2xs2.anchors["diagonal"])
    assert iso.l == 2 and iso.stabilizer.name == "SO2"
    assert iso.orbit_dim == 2 and iso.V_dim == 2 and iso.m_dim == 0
    assert np.allclose(iso.sigma, -np.eye(2), atol=1e-7)


def test_s2xs2_generic_and_antipodal_isotropy(s2xs2):
    gen = isotropy_decomposition(s2xs2.action(), s2xs2.anchors["generic"])
    assert gen.stabilizer.name == "trivial" and gen.orbit_dim == 3 and gen.m_dim == 1
    anti = isotropy_decomposition(s2xs2.action(), s2xs2.anchors["antipodal"])
    assert anti.V_dim == 0 and anti.m_dim == 2
    # an orientation-reversing map of the normal plane
    assert np.isclose(np.linalg.det(anti.sigma), -1.0, atol=1e-6)


def test_symplectic_gram_schmidt():
    rng = np.random.default_rng(2)
    J = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    basis = symplectic_gram_schmidt(J, rng.normal(size=(4, 4)))
    G = basis.T @ J @ basis
    expect = np.kron(np.eye(2), np.array([[0, 1], [-1, 0]]))
    assert np.allclose(G, expect, atol=1e-10)


def test_symplectic_normal_space_of_isotropic_line():
    J = np.array([[0, 1], [-1, 0]], dtype=float)
    darboux, N = symplectic_normal_space(J, np.array([[1.0], [0.0]]))
    assert darboux.shape[1] == 0 and N.shape[1] == 1
