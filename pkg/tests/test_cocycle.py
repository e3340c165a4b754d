import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpre.cocycle import (PositiveMatrix, ProjectivePoint, SBMatrix, cocycle_path, col_min,
                          comparability_constants, comparability_ratio, comparability_violations,
                          contraction_coeff, hilbert_distance, l1_norm, product_chain, project_act)


def simplex_points(p):
    return st.lists(st.floats(0.01, 1.0), min_size=p, max_size=p).map(
        lambda v: ProjectivePoint(np.array(v)))


def positive_matrices(p, lo=0.1, hi=1.0):
    return st.lists(st.floats(lo, hi), min_size=p * p, max_size=p * p).map(
        lambda v: np.array(v).reshape(p, p))


def test_positive_matrix_rejects_zero_entry():
    with pytest.raises(ValueError):
        PositiveMatrix([[1.0, 0.0], [1.0, 1.0]])


def test_sb_matrix_checks_bound():
    SBMatrix(np.array([[1.0, 2.0], [1.5, 1.0]]), 2.0)
    with pytest.raises(ValueError, match="comparable"):
        SBMatrix(np.array([[1.0, 3.0], [1.0, 1.0]]), 2.0)


def test_projective_point_normalizes():
    x = ProjectivePoint([2.0, 6.0])
    assert np.allclose(x.coords, [0.25, 0.75])
    with pytest.raises(ValueError):
        ProjectivePoint([1.0, -1.0])
    with pytest.raises(ValueError):
        ProjectivePoint([1.0, 1.0], "diagonal")


def test_project_act_hand_value():
    M = np.array([[1.0, 2.0], [3.0, 3.0]])
    img, inc = project_act(ProjectivePoint([0.5, 0.5]), M)
    # x M = (2, 2.5), norm 4.5
    assert np.allclose(img.coords, [4 / 9, 5 / 9])
    assert inc == pytest.approx(math.log(4.5))
    col, cinc = project_act(ProjectivePoint([0.5, 0.5], "column"), M)
    assert np.allclose(col.coords, [1.5 / 4.5, 3 / 4.5])
    assert cinc == pytest.approx(math.log(4.5))


def test_contraction_coeff_hand_value():
    # |2*2 - 1*1| / (2*2 + 1*1) = 3/5
    assert contraction_coeff([[2.0, 1.0], [1.0, 2.0]]) == pytest.approx(0.6)
    assert contraction_coeff(np.ones((3, 3))) == pytest.approx(0.0)


def test_hilbert_distance_hand_value():
    # m(x,y) m(y,x) = (0.5/0.8)(0.2/0.5) = 0.25 -> (1-0.25)/(1+0.25)
    d = hilbert_distance(ProjectivePoint([0.5, 0.5]), ProjectivePoint([0.8, 0.2]))
    assert d == pytest.approx(0.6)


def test_norm_helpers():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert l1_norm(M) == 10.0
    assert col_min(M) == 4.0
    assert comparability_ratio(M) == 4.0


def test_product_chain_orders():
    A = np.array([[1.0, 2.0], [0.5, 1.0]])
    B = np.array([[2.0, 1.0], [1.0, 3.0]])
    unit, ls = product_chain([A, B])
    assert np.allclose(unit * math.exp(ls), A @ B)
    unit, ls = product_chain([A, B], "right-to-left")
    assert np.allclose(unit * math.exp(ls), B @ A)
    with pytest.raises(ValueError):
        product_chain([])


def test_comparability_constants():
    delta, Delta = comparability_constants(2.0, 3)
    assert delta == 36.0
    assert Delta == pytest.approx(math.log(36.0))
    with pytest.raises(ValueError):
        comparability_constants(1.0, 2)


def test_comparability_bound_on_random_products():
    rng = np.random.default_rng(3)
    B, p = 2.5, 3
    delta, _ = comparability_constants(B, p)
    for _ in range(50):
        mats = [np.exp(rng.uniform(0, math.log(B), (p, p))) for _ in range(6)]
        assert comparability_violations(mats, delta, rng) == 0


@settings(max_examples=60, deadline=None)
@given(simplex_points(3), st.lists(positive_matrices(3), min_size=2, max_size=8), st.floats(-5, 5))
def test_cocycle_additivity(x, mats, a):
    full = cocycle_path(x, a, mats)
    k = len(mats) // 2
    tail = cocycle_path(full.states[k], full.sums[k], mats[k:])
    assert abs(tail.sums[-1] - full.sums[-1]) <= 1e-12 * max(1.0, abs(full.sums[-1]))
    _, ls = product_chain(mats)
    # S_n(x) - a = log|x M_0 ... M_{n-1}| within the norm bounds
    assert full.sums[-1] - a <= ls + 1e-12


@settings(max_examples=100, deadline=None)
@given(simplex_points(3), simplex_points(3), simplex_points(3))
def test_metric_axioms(x, y, z):
    dxy = hilbert_distance(x, y)
    assert 0.0 <= dxy <= 1.0
    assert dxy == pytest.approx(hilbert_distance(y, x), abs=1e-12)
    assert hilbert_distance(x, x) == pytest.approx(0.0, abs=1e-12)
    assert dxy <= hilbert_distance(x, z) + hilbert_distance(z, y) + 1e-10


@settings(max_examples=100, deadline=None)
@given(simplex_points(3), simplex_points(3), positive_matrices(3))
def test_contraction_property(x, y, M):
    c = contraction_coeff(M)
    assert 0.0 <= c < 1.0
    d0 = hilbert_distance(x, y)
    d1 = hilbert_distance(project_act(x, M)[0], project_act(y, M)[0])
    assert d1 <= c * d0 + 1e-10


def test_hilbert_distance_flavor_mismatch():
    with pytest.raises(ValueError):
        hilbert_distance(ProjectivePoint([1, 1]), ProjectivePoint([1, 1], "column"))
