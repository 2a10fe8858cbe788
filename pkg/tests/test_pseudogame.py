import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import enumerate_pure_deviation_exploitability
from pseudeq import pseudogame as pg
from pseudeq.pseudogame import PseudoGame

MP = np.array([[1.0, -1.0], [-1.0, 1.0]])


def _quadratic_game(targets):
    """Independent single-player problems u_i = -(a_i - t_i)^2 on [0, 1]."""
    t = np.asarray(targets, float)
    return PseudoGame([1] * len(t), lambda a, i: -(a[i] - t[i]) ** 2,
                      lambda a, i: np.zeros(0), lambda a: np.clip(a, 0, 1), 0.0, 1.0)


profiles01 = st.tuples(st.floats(0, 1), st.floats(0, 1))


def _mixed(rng, k=2):
    return np.concatenate([rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))])


# ---------------------------------------------------------------- regret

def test_identity_deviation_has_zero_regret():
    g = pg.matching_pennies()
    a = np.array([0.3, 0.7, 0.6, 0.4])
    assert pg.regret(g, 0, a, a[:2]) == 0.0


def test_matching_pennies_regret_of_mismatching_player():
    g = pg.matching_pennies()
    a = np.array([1.0, 0.0, 1.0, 0.0])
    # player 1 loses on a match and gains 2 by switching
    assert pg.regret(g, 1, a, np.array([0.0, 1.0])) == pytest.approx(2.0)
    assert pg.regret(g, 0, a, np.array([0.0, 1.0])) == pytest.approx(-2.0)


def test_nonlipschitz_regret():
    g = pg.nonlipschitz_example()
    assert pg.regret(g, 0, np.array([0.25, 0.25]), np.array([0.5])) == pytest.approx(0.25)


def test_infeasible_deviation_names_constraint():
    g = pg.nonlipschitz_example()
    with pytest.raises(pg.InfeasibleDeviation) as err:
        pg.regret(g, 0, np.array([0.25, 0.25]), np.array([0.9]))
    assert err.value.index == 0


def test_cumulative_regret_values():
    g = pg.nonlipschitz_example()
    a = np.array([0.25, 0.25])
    assert pg.cumulative_regret(g, a, a) == 0.0
    assert pg.cumulative_regret(g, a, np.array([0.5, 0.5])) == pytest.approx(0.5)


@given(profiles01, profiles01, profiles01)
def test_cumulative_regret_is_sum_of_independent_regrets(t, a, b):
    g = _quadratic_game(t)
    a, b = np.array(a), np.array(b)
    expected = sum(pg.regret(g, i, a, b[i:i + 1]) for i in range(2))
    assert pg.cumulative_regret(g, a, b) == pytest.approx(expected, abs=1e-12)


# ---------------------------------------------------------------- exploitability

def test_nonlipschitz_closed_form_points():
    g = pg.nonlipschitz_example()
    assert pg.exploitability(g, np.array([0.25, 0.25])) == pytest.approx(0.5)
    assert pg.exploitability(g, np.array([1.0, 1.0])) == pytest.approx(0.0, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1))
def test_nonlipschitz_matches_closed_form_where_feasible(a1, a2):
    if a2 < a1 ** 2 or a1 < a2 ** 2:
        return
    g = pg.nonlipschitz_example()
    val = pg.exploitability(g, np.array([a1, a2]))
    assert val == pytest.approx(pg.nonlipschitz_closed_form(a1, a2), abs=1e-12)


def test_nonlipschitz_gradient_blows_up_near_zero():
    f = lambda a: pg.nonlipschitz_closed_form(*a)
    a, h = np.array([1e-4, 1e-4]), 1e-7
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        assert (f(a + e) - f(a - e)) / (2 * h) > 40


def test_matching_pennies_uniform_is_equilibrium():
    assert pg.exploitability(pg.matching_pennies(), np.full(4, 0.5)) == pytest.approx(0.0, abs=1e-12)


def test_matching_pennies_pure_profile_exploitability():
    a = np.array([1.0, 0.0, 1.0, 0.0])
    ref = enumerate_pure_deviation_exploitability(MP, -MP, a[:2], a[2:])
    assert ref == pytest.approx(2.0)
    assert pg.exploitability(pg.matching_pennies(), a) == pytest.approx(ref)


def test_dominant_strategy_best_response():
    g = pg.bimatrix_adapter([[1.0, 1.0], [0.0, 0.0]], np.zeros((2, 2)))
    for y in ([1.0, 0.0], [0.0, 1.0], [0.3, 0.7]):
        assert np.array_equal(g.best_response(0, np.array([0.5, 0.5, *y])), [1.0, 0.0])


def test_bimatrix_shape_checked():
    with pytest.raises(ValueError, match="shape"):
        pg.bimatrix_adapter(np.zeros((2, 2)), np.zeros((2, 3)))


@given(st.integers(0, 10_000))
def test_bimatrix_exploitability_matches_pure_enumeration(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(2, 3, 3))
    a = _mixed(rng, 3)
    ref = enumerate_pure_deviation_exploitability(A, B, a[:3], a[3:])
    assert pg.exploitability(pg.bimatrix_adapter(A, B), a) == pytest.approx(ref, abs=1e-12)


@given(st.integers(0, 10_000))
def test_exploitability_dominates_cumulative_regret(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(2, 2, 2))
    g = pg.bimatrix_adapter(A, B)
    a, b = _mixed(rng), _mixed(rng)
    assert pg.exploitability(g, a) >= pg.cumulative_regret(g, a, b) - 1e-12


@given(st.integers(0, 10_000))
def test_psi_of_a_with_itself_is_zero(seed):
    rng = np.random.default_rng(seed)
    g = pg.bimatrix_adapter(*rng.normal(size=(2, 2, 2)))
    a = _mixed(rng)
    assert pg.cumulative_regret(g, a, a) == 0.0


@given(st.integers(0, 10_000))
def test_matching_pennies_symmetric_under_player_swap(seed):
    # swapping the players of matching pennies and relabelling one player's actions
    rng = np.random.default_rng(seed)
    a = _mixed(rng)
    g = pg.matching_pennies()
    swapped = np.array([a[3], a[2], a[0], a[1]])
    assert pg.exploitability(g, swapped) == pytest.approx(pg.exploitability(g, a), abs=1e-12)


@given(st.integers(0, 10_000), st.floats(-10, 10))
def test_constant_payoff_shift_leaves_regrets(seed, c):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(2, 2, 2))
    g0, g1 = pg.bimatrix_adapter(A, B), pg.bimatrix_adapter(A + c, B)
    a, b = _mixed(rng), _mixed(rng)
    for i in range(2):
        assert pg.regret(g1, i, a, g0.action(b, i)) == pytest.approx(
            pg.regret(g0, i, a, g0.action(b, i)), abs=1e-9)


def test_regret_report_consistency_and_json():
    g = pg.matching_pennies()
    rep = pg.regret_report(g, np.array([1.0, 0.0, 1.0, 0.0]))
    assert rep.cumulative == pytest.approx(sum(rep.per_player), abs=1e-12)
    assert all(r >= -1e-9 for r in rep.per_player)
    assert json.loads(rep.to_json())["exploitability"] == pytest.approx(2.0)


def test_profile_json_roundtrip():
    g = pg.matching_pennies()
    a = np.array([0.2, 0.8, 0.6, 0.4])
    assert np.array_equal(pg.profile_from_json(pg.profile_to_json(g, a)), a)


def test_best_responses_are_feasible():
    g = pg.nonlipschitz_example()
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = g.feasible_project(rng.uniform(0, 1, 2))
        for i in range(2):
            b = g.substitute(a, i, g.best_response(i, a))
            assert np.all(g.constraints(b, i) >= -1e-9)


@given(st.floats(-1, 2), st.floats(-1, 2))
def test_projection_idempotent(x, y):
    g = pg.nonlipschitz_example()
    p = g.feasible_project(np.array([x, y]))
    assert np.array_equal(g.feasible_project(p), p)
    assert g.is_feasible(p)


def test_ascent_fallback_matches_exact_oracle():
    exact = pg.nonlipschitz_example()
    blind = PseudoGame(exact.action_dims, exact.payoff, exact.constraints, exact.feasible_project,
                       0.0, 1.0, project_deviation=exact.project_deviation)
    a = np.array([0.25, 0.25])
    rep = pg.regret_report(blind, a)
    assert rep.exploitability == pytest.approx(0.5, abs=1e-3)
    assert rep.exploitability <= 0.5 + 1e-9


def test_joint_mode_uses_ascent_without_oracle():
    g = _quadratic_game([0.2, 0.9])
    rep = pg.regret_report(g, np.array([0.5, 0.5]), mode="joint")
    assert rep.exploitability == pytest.approx(0.09 + 0.16, abs=1e-4)


# ---------------------------------------------------------------- normalisation

def test_normalized_exploitability_zero_at_equilibrium():
    g = pg.matching_pennies()
    assert pg.normalized_exploitability(g, np.full(4, 0.5), 200, 0) == pytest.approx(0.0, abs=1e-12)


def test_uniform_profiles_average_to_one():
    g = pg.matching_pennies()
    rng = np.random.default_rng(123)
    draws = [pg.exploitability(g, pg.sample_feasible(g, rng)) for _ in range(4000)]
    denom = pg.mean_uniform_exploitability(g, 4000, 0)
    assert np.mean(draws) / denom == pytest.approx(1.0, abs=0.05)


def test_degenerate_denominator_rejected():
    g = pg.bimatrix_adapter(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="trivially"):
        pg.normalized_exploitability(g, np.full(4, 0.5), 10, 0)


def test_rejection_sampler_for_generic_game():
    g = pg.nonlipschitz_example()
    x = pg.sample_feasible(g, np.random.default_rng(0))
    assert g.is_feasible(x)


# ---------------------------------------------------------------- brute force

def test_brute_force_nonlipschitz():
    g = pg.nonlipschitz_example()
    assert pg.brute_force_exploitability(g, np.array([0.25, 0.25]), 101) == pytest.approx(0.5, abs=0.01)


def test_brute_force_single_point_is_zero():
    g = pg.matching_pennies()
    assert pg.brute_force_exploitability(g, np.array([1.0, 0.0, 1.0, 0.0]), 1) == 0.0


def test_brute_force_matching_pennies_uniform():
    assert pg.brute_force_exploitability(pg.matching_pennies(), np.full(4, 0.5), 11) == pytest.approx(0, abs=1e-9)


def test_brute_force_grid_cap():
    g = pg.nonlipschitz_example()
    with pytest.raises(ValueError, match="more than"):
        pg.brute_force_exploitability(g, np.array([0.25, 0.25]), 10 ** 7)


@pytest.mark.parametrize("points", [3, 11, 101])
def test_brute_force_lower_bounds_and_converges(points):
    g = pg.nonlipschitz_example()
    rng = np.random.default_rng(points)
    for _ in range(20):
        a = g.feasible_project(rng.uniform(0, 1, 2))
        bf, ex = pg.brute_force_exploitability(g, a, points), pg.exploitability(g, a)
        assert bf <= ex + 1e-12
        if points == 101:
            # each player's grid maximiser is within one spacing of the true one
            assert ex - bf <= 2 * 0.01


def test_simplex_grid_counts():
    grid = pg.simplex_grid(3, 5)
    assert len(grid) == math.comb(4 + 2, 2)
    assert np.allclose(grid.sum(1), 1.0)
