import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import deliverable_range, enumerate_integer_optimum, grid_dual, random_sessions, spec_for
from trafficshape.errors import InvalidInputError
from trafficshape.lp_dual import (
    ConstraintSpec,
    DualPrices,
    SampledLpConfig,
    dual_objective,
    load_prices,
    save_prices,
    solve_hindsight,
    solve_sampled_dual,
)
from trafficshape.matching import hungarian_max_weight
from trafficshape.session import SessionInstance

FULL = SampledLpConfig(epsilon=1.0, nu=1.0)


def binding_instance(seed, n=4, m=2, T=1, level=0.9):
    rng = np.random.default_rng(seed)
    sessions = random_sessions(rng, n, m, T)
    targets = []
    for t in range(T):
        lo, hi = deliverable_range(sessions, t)
        targets.append(lo + level * (hi - lo))
    return sessions, spec_for(targets, n)


# -- dual function ------------------------------------------------------------

def test_dual_value_worked_example():
    s = SessionInstance(0, [[1, 0], [0, 1]], [[[0, 1], [1, 0]]])
    value, grad = dual_objective([2.0], [s], spec_for([1.0], 1))
    # S = [[1, 2], [2, 1]] -> best matching 4, minus 2 * 1
    assert value == pytest.approx(2.0)
    assert grad.tolist() == [1.0]


def test_dual_at_zero_prices():
    sessions, spec = binding_instance(1, n=3, m=3, T=1)
    value, grad = dual_objective([0.0], sessions, spec, nu=1.2, epsilon=0.5)
    assert value == pytest.approx(sum(hungarian_max_weight(s.C)[0].value for s in sessions))
    delivered = sum(s.delivered(hungarian_max_weight(s.C)[0].sigma)[0] for s in sessions)
    assert grad[0] == pytest.approx(delivered - 1.2 * 0.5 * spec.b[0])


def test_dual_rejects_bad_prices():
    sessions, spec = binding_instance(1)
    with pytest.raises(InvalidInputError):
        dual_objective([-1.0], sessions, spec)
    with pytest.raises(InvalidInputError):
        dual_objective([1.0, 2.0], sessions, spec)
    with pytest.raises(InvalidInputError):
        DualPrices((-0.5,))


@pytest.mark.parametrize("seed", range(5))
def test_subgradient_inequality(seed):
    rng = np.random.default_rng(seed)
    sessions, spec = binding_instance(seed, n=5, m=3, T=2)
    for _ in range(20):
        lam, mu = rng.random(2) * 3, rng.random(2) * 3
        g_lam, grad = dual_objective(lam, sessions, spec)
        g_mu, _ = dual_objective(mu, sessions, spec)
        assert g_mu >= g_lam + grad @ (mu - lam) - 1e-9


def test_subgradient_matches_finite_difference():
    sessions, spec = binding_instance(3, n=5, m=3, T=2)
    lam = np.array([0.37, 1.21])
    g0, grad = dual_objective(lam, sessions, spec)
    h = 1e-7
    for t in range(2):
        step = np.zeros(2)
        step[t] = h
        g1, _ = dual_objective(lam + step, sessions, spec)
        assert (g1 - g0) / h == pytest.approx(grad[t], abs=1e-5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(0, 20), min_size=2, max_size=2))
def test_property_weak_duality_against_enumeration(seed, lam):
    sessions, spec = binding_instance(seed, n=3, m=2, T=2, level=0.6)
    best, _ = enumerate_integer_optimum(sessions, spec.b)
    value, _ = dual_objective(lam, sessions, spec)
    assert value >= best - 1e-9


# -- solver ---------------------------------------------------------------------

def test_grid_oracle_worked_example():
    # seed 7: grid search on [0, 10] at step 1e-3 puts the minimum at 3.391, value 4.367038
    sessions, spec = binding_instance(7)
    rep = solve_sampled_dual(sessions, spec, FULL)
    assert rep.prices.lam[0] == pytest.approx(3.391, abs=1e-2)
    assert rep.dual_value == pytest.approx(4.367038, abs=1e-4)
    assert rep.converged and not rep.likely_infeasible


@pytest.mark.parametrize("seed", range(20, 35))
def test_matches_grid_search(seed):
    sessions, spec = binding_instance(seed, n=6, m=3, level=0.85)
    rhs = spec.b[0]
    spec = spec.with_targets([rhs / (0.2 * 1.1)])
    grid = np.arange(0.0, 10.0 + 5e-4, 1e-3)
    vals = grid_dual(sessions, rhs, grid)
    rep = solve_sampled_dual(sessions, spec, SampledLpConfig(epsilon=0.2, nu=1.1))
    assert 0 < rep.prices.lam[0] < 10
    assert abs(rep.prices.lam[0] - grid[vals.argmin()]) <= 1e-2
    assert rep.dual_value <= vals.min() + 1e-9


def test_nonbinding_targets_get_zero_price():
    sessions, spec = binding_instance(4, n=5, m=3, T=2, level=0.0)
    rep = solve_sampled_dual(sessions, spec, FULL)
    assert rep.prices.lam == (0.0, 0.0)


def test_zero_targets():
    sessions, _ = binding_instance(4, n=5, m=3, T=2)
    rep = solve_sampled_dual(sessions, spec_for([0, 0], 5), FULL)
    assert rep.prices.lam == (0.0, 0.0)
    assert rep.dual_value == pytest.approx(sum(hungarian_max_weight(s.C)[0].value for s in sessions))


def test_weak_duality_and_slackness():
    for seed in range(10):
        sessions, spec = binding_instance(seed, n=6, m=3, T=2, level=0.7)
        rep = solve_hindsight(sessions, spec)
        assert rep.dual_value >= rep.best_primal_bound - 1e-9 * max(1, abs(rep.dual_value))
        delivered = rep.session_delivered.sum(axis=0)
        for t, lam in enumerate(rep.prices.lam):
            assert lam <= 1e-9 or abs(delivered[t] - spec.b[t]) <= 1e-6 * max(1, spec.b[t])
            if lam > 1e-9:
                assert rep.binding[t]
        assert (delivered >= spec.b - 1e-6).all()


def test_running_best_is_monotone():
    sessions, spec = binding_instance(2, n=8, m=4, T=3, level=0.6)
    rep = solve_hindsight(sessions, spec)
    assert all(b <= a for a, b in zip(rep.history, rep.history[1:]))


def test_deterministic():
    sessions, spec = binding_instance(2, n=8, m=4, T=3, level=0.6)
    a = solve_sampled_dual(sessions, spec, SampledLpConfig(epsilon=0.25))
    b = solve_sampled_dual(sessions, spec, SampledLpConfig(epsilon=0.25))
    assert a.prices.lam == b.prices.lam and a.dual_value == b.dual_value


def test_hindsight_without_constraints():
    rng = np.random.default_rng(0)
    sessions = random_sessions(rng, 5, 3, 0)
    rep = solve_hindsight(sessions, ConstraintSpec((), 5))
    assert rep.prices.lam == ()
    assert rep.dual_value == pytest.approx(sum(hungarian_max_weight(s.C)[0].value for s in sessions))


@pytest.mark.parametrize("seed", range(12))
def test_hindsight_enumeration_sandwich(seed):
    rng = np.random.default_rng(seed)
    n, m, T = int(rng.integers(2, 5)), int(rng.integers(2, 4)), int(rng.integers(1, 3))
    sessions, spec = binding_instance(seed + 100, n=n, m=m, T=T, level=0.5)
    best, _ = enumerate_integer_optimum(sessions, spec.b)
    rep = solve_hindsight(sessions, spec)
    span = max(float(s.C.max() - s.C.min()) for s in sessions) * m
    assert rep.dual_value >= best - 1e-9
    assert rep.dual_value - best <= T * span + 1e-9


@pytest.mark.parametrize("c", [0.5, 3.0, 10.0])
def test_scaling_engagement(c):
    sessions, spec = binding_instance(9, n=6, m=3, T=2, level=0.7)
    scaled = [SessionInstance(s.id, c * s.C, s.A) for s in sessions]
    base = solve_hindsight(sessions, spec).dual_value
    assert solve_hindsight(scaled, spec).dual_value / base == pytest.approx(c, rel=5e-2)


def test_infeasible_targets_hit_cap():
    sessions, spec = binding_instance(5, n=4, m=3, T=1, level=1.5)
    rep = solve_hindsight(sessions, spec)
    assert rep.likely_infeasible and "likely_infeasible" in rep.flags
    assert rep.best_primal_bound == -np.inf


def test_iteration_limit_flags_non_convergence():
    sessions, spec = binding_instance(2, n=8, m=4, T=3, level=0.6)
    rep = solve_hindsight(sessions, spec, SampledLpConfig(max_iters=2))
    assert not rep.converged and "non_converged" in rep.flags


def test_large_epsilon_warns(caplog):
    sessions, spec = binding_instance(2)
    with caplog.at_level(logging.WARNING):
        solve_sampled_dual(sessions, spec, SampledLpConfig(epsilon=0.5))
    assert "outside" in caplog.text


def test_prices_file_round_trip(tmp_path):
    sessions, spec = binding_instance(7)
    spec = ConstraintSpec(spec.targets, spec.horizon, ("clicks",))
    rep = solve_sampled_dual(sessions, spec, FULL)
    path = tmp_path / "prices.json"
    save_prices(path, rep, spec.names)
    assert load_prices(path, spec.names) == rep.prices
    with pytest.raises(InvalidInputError):
        load_prices(path, ("other",))


def test_spec_validation_and_json():
    spec = ConstraintSpec((1.0, 2.0), 10, ("a", "b"))
    assert ConstraintSpec.from_json(spec.to_json()) == spec
    assert ConstraintSpec((1.0,), 3).names == ("c0",)
    for bad in [((-1.0,), 3), ((float("nan"),), 3), ((1.0,), 0)]:
        with pytest.raises(InvalidInputError):
            ConstraintSpec(*bad)
    with pytest.raises(InvalidInputError):
        SampledLpConfig(epsilon=0)
    assert SampledLpConfig(epsilon=0.2).safety == pytest.approx(1.8)
