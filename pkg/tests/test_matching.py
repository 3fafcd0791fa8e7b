import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from trafficshape.errors import InvalidInputError, SizeLimitError
from trafficshape.matching import (
    assign_batch,
    brute_force_matching,
    check_certificate,
    debug_dump,
    gather,
    greedy_matching,
    hungarian_max_weight,
    matching_value,
    rank_one_matching,
)


def enumerate_best(W):
    W = np.asarray(W, dtype=float)
    m = len(W)
    return max(sum(W[i, p[i]] for i in range(m)) for p in itertools.permutations(range(m)))


def assert_certified(W, a, cert):
    checks = check_certificate(W, a, cert)
    assert checks["feasible"] and checks["strong_duality"] and checks["tight"], checks


# -- worked examples --------------------------------------------------------

def test_identity_like():
    a, cert = hungarian_max_weight(np.eye(3))
    assert a.sigma == (0, 1, 2) and a.value == 3
    assert_certified(np.eye(3), a, cert)


def test_swap():
    a, _ = hungarian_max_weight([[0, 1], [1, 0]])
    assert a.sigma == (1, 0) and a.value == 2


def test_seeded_integer_4x4():
    # drawn with default_rng(20240601).integers(0, 10, (4, 4)); 26 from S_4 enumeration
    W = np.array([[1, 7, 1, 5], [3, 4, 0, 9], [0, 1, 9, 4], [1, 5, 4, 5]])
    assert np.array_equal(W, np.random.default_rng(20240601).integers(0, 10, size=(4, 4)))
    a, cert = hungarian_max_weight(W)
    assert a.value == 26
    assert brute_force_matching(W).value == 26
    assert_certified(W, a, cert)


def test_greedy_half_example():
    W = [[2, 1.5], [1.5, 0]]
    g = greedy_matching(W)
    assert g.sigma == (0, 1) and g.value == 2
    assert hungarian_max_weight(W)[0].value == 3


def test_greedy_rank_one_example():
    W = np.outer([3, 1], [1, 0.5])
    assert greedy_matching(W).value == hungarian_max_weight(W)[0].value == 3.5


def test_zero_matrix_ties_to_identity():
    assert greedy_matching(np.zeros((3, 3))).sigma == (0, 1, 2)
    assert hungarian_max_weight(np.zeros((3, 3)))[0].value == 0
    assert brute_force_matching(np.ones((2, 2))).sigma == (0, 1)


def test_brute_force_small():
    a = brute_force_matching([[5]])
    assert a.sigma == (0,) and a.value == 5
    with pytest.raises(SizeLimitError):
        brute_force_matching(np.zeros((9, 9)))


def test_rank_one_sort_example():
    # refctr-shaped curve with a bump at slot 3; 5.375 checked against scipy's assignment solver
    s = np.array([2.0, 0.5, 1.5, 3.0, 1.0])
    ref = np.array([1, 0.6, 0.4, 0.45, 0.2])
    sigma = rank_one_matching(s, ref)
    assert sigma.tolist() == [1, 4, 3, 0, 2]
    assert matching_value(np.outer(s, ref), sigma) == pytest.approx(5.375, abs=1e-12)


@pytest.mark.parametrize("W", [np.zeros((2, 3)), np.zeros((0, 0)), [[np.nan]], [[np.inf, 0], [0, 0]], np.zeros(3)])
def test_rejects_bad_input(W):
    with pytest.raises(InvalidInputError):
        hungarian_max_weight(W)
    with pytest.raises(InvalidInputError):
        greedy_matching(W)


def test_negative_weights():
    W = np.array([[-5.0, -1.0], [-2.0, -7.0]])
    a, cert = hungarian_max_weight(W)
    assert a.sigma == (1, 0) and a.value == -3
    assert_certified(W, a, cert)


def test_debug_dump_round_trip():
    W = np.array([[1.0, 2.0], [3.0, 0.5]])
    a, cert = hungarian_max_weight(W)
    obj = json.loads(debug_dump(W, a, cert))
    assert obj["sigma"] == list(a.sigma)
    assert np.allclose(obj["alpha"], cert.alpha)


def test_permutation_matrix():
    a = hungarian_max_weight([[0, 1], [1, 0]])[0]
    assert np.array_equal(a.permutation_matrix(), [[0, 1], [1, 0]])


# -- oracle sweeps ----------------------------------------------------------

def test_oracle_equivalence_integer_and_real():
    rng = np.random.default_rng(7)
    for k in range(400):
        m = int(rng.integers(2, 7))
        W = rng.integers(-5, 20, size=(m, m)) if k % 2 else rng.normal(size=(m, m)) * 10
        a, cert = hungarian_max_weight(W)
        if k % 2:
            assert a.value == enumerate_best(W)
        else:
            assert abs(a.value - enumerate_best(W)) <= 1e-7
        assert_certified(W, a, cert)


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    S = rng.random((30, 6, 6))
    S[:10] = np.einsum("ki,kj->kij", rng.random((10, 6)), rng.random((10, 6)))
    best = np.array([hungarian_max_weight(W)[0].value for W in S])
    for matcher in ("hungarian", "auto"):
        assert np.allclose(gather(S, assign_batch(S, matcher)), best, atol=1e-12)
    greedy = gather(S, assign_batch(S, "greedy"))
    assert np.allclose(greedy[:10], best[:10], atol=1e-12)
    assert (greedy >= 0.5 * best - 1e-12).all()


def test_batch_greedy_sort_path_agrees_with_edge_greedy():
    rng = np.random.default_rng(11)
    S = np.einsum("ki,kj->kij", rng.random((50, 7)), rng.random((50, 7)))
    fast = assign_batch(S, "greedy")
    for W, sigma in zip(S, fast):
        assert tuple(sigma) == greedy_matching(W).sigma


def test_gather_constraint_axis():
    rng = np.random.default_rng(0)
    A = rng.random((4, 2, 3, 3))
    sigmas = np.array([[0, 1, 2], [2, 1, 0], [1, 0, 2], [0, 2, 1]])
    out = gather(A, sigmas)
    for k in range(4):
        for t in range(2):
            assert out[k, t] == pytest.approx(matching_value(A[k, t], sigmas[k]))


# -- properties -------------------------------------------------------------

square = st.integers(1, 6).flatmap(
    lambda m: arrays(np.float64, (m, m), elements=st.floats(-1e3, 1e3, allow_nan=False, width=64)))


@settings(max_examples=200, deadline=None)
@given(square)
def test_property_optimal_and_certified(W):
    a, cert = hungarian_max_weight(W)
    assert sorted(a.sigma) == list(range(len(W)))
    assert abs(a.value - matching_value(W, a.sigma)) <= 1e-9
    assert a.value >= brute_force_matching(W).value - 1e-7 * max(1.0, np.abs(W).max())
    assert_certified(W, a, cert)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 6).flatmap(lambda m: arrays(np.int64, (m, m), elements=st.integers(-50, 50))),
       st.integers(-1000, 1000))
def test_property_shift_invariance(W, c):
    a = hungarian_max_weight(W)[0]
    b = hungarian_max_weight(W + c)[0]
    assert a.sigma == b.sigma
    assert b.value == a.value + len(W) * c


@settings(max_examples=200, deadline=None)
@given(square)
def test_property_greedy_half(W):
    W = np.abs(W)
    assert greedy_matching(W).value >= 0.5 * hungarian_max_weight(W)[0].value - 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 7).flatmap(lambda m: st.tuples(
    arrays(np.float64, m, elements=st.floats(0, 100, width=64)),
    arrays(np.float64, m, elements=st.floats(0, 1, width=64)))))
def test_property_rank_one_sort_is_optimal(sr):
    s, r = sr
    W = np.outer(s, r)
    best = hungarian_max_weight(W)[0].value
    assert matching_value(W, rank_one_matching(s, r)) == pytest.approx(best, rel=1e-12, abs=1e-9)
    assert greedy_matching(W).value == pytest.approx(best, rel=1e-12, abs=1e-9)
