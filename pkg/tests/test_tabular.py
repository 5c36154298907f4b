"""Exact tier: evaluation, improvement, multi-step planning, distillation."""

import numpy as np
import pytest

from plandistill.errors import ConvergenceError
from plandistill.mdp import TabularMDP, mc_soft_return, random_mdp
from plandistill.tabular import (
    HorizonPolicy,
    TabularPolicy,
    distill_improve,
    extended_policy_iteration,
    horizon_bound_report,
    multi_step_objective,
    multi_step_objective_all,
    one_step_improvement,
    random_policy,
    soft_policy_evaluation,
    soft_value_iteration,
    solve_multi_step,
    uniform_policy,
)

from oracles import (
    bellman_iteration_values,
    entropy_objective_on_simplex,
    projected_gradient_multi_step,
    simplex_grid,
)


def _single_loop_mdp(reward: float, gamma: float, n_actions: int = 1) -> TabularMDP:
    t = np.ones((1, n_actions, 1))
    r = np.full((1, n_actions), reward)
    return TabularMDP(1, n_actions, t, r, gamma)


# --- soft policy evaluation ---------------------------------------------------


def test_evaluation_geometric_series_single_action():
    mdp = _single_loop_mdp(1.0, 0.5)
    values = soft_policy_evaluation(mdp, uniform_policy(1, 1), alpha=1.0)
    assert values.v[0] == pytest.approx(2.0, abs=1e-12)
    assert values.q[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_evaluation_pure_entropy_reward():
    mdp = _single_loop_mdp(0.0, 0.5, n_actions=2)
    values = soft_policy_evaluation(mdp, uniform_policy(1, 2), alpha=1.0)
    assert values.v[0] == pytest.approx(2.0 * np.log(2.0), abs=1e-12)


def test_evaluation_matches_power_iteration_oracle():
    mdp = random_mdp(5, 3, 0.9, seed=21)
    policy = uniform_policy(5, 3)
    exact = soft_policy_evaluation(mdp, policy, alpha=0.2)
    iterated = bellman_iteration_values(mdp, policy.probs, alpha=0.2)
    assert np.abs(exact.v - iterated).max() < 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_evaluation_bellman_residual_below_1e9(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(int(rng.integers(2, 9)), int(rng.integers(2, 5)), 0.95, seed=seed)
    policy = random_policy(mdp.n_states, mdp.n_actions, rng)
    values = soft_policy_evaluation(mdp, policy, alpha=0.2)
    backup_v = (policy.probs * (values.q - 0.2 * policy.log_probs())).sum(axis=1)
    assert np.abs(backup_v - values.v).max() <= 1e-9
    backup_q = mdp.reward + mdp.gamma * mdp.transition @ values.v
    assert np.abs(backup_q - values.q).max() <= 1e-9


def test_evaluation_rejects_bad_alpha():
    mdp = _single_loop_mdp(0.0, 0.5)
    with pytest.raises(ValueError):
        soft_policy_evaluation(mdp, uniform_policy(1, 1), alpha=0.0)


# --- one-step improvement -----------------------------------------------------


def test_improvement_equal_q_gives_uniform():
    mdp = _single_loop_mdp(0.0, 0.5, n_actions=3)
    values = soft_policy_evaluation(mdp, uniform_policy(1, 3), alpha=1.0)
    pi = one_step_improvement(values)
    assert np.allclose(pi.probs, 1.0 / 3.0, atol=1e-12)


def test_improvement_closed_form_softmax():
    from plandistill.tabular import SoftValueTable

    q = np.array([[0.0, np.log(3.0)]])
    values = SoftValueTable(q=q, v=np.zeros(1), alpha=1.0)
    pi = one_step_improvement(values)
    assert np.allclose(pi.probs, [[0.25, 0.75]], atol=1e-12)


def test_improvement_beats_simplex_grid_search():
    rng = np.random.default_rng(5)
    q = rng.normal(size=(4, 3))
    from plandistill.tabular import SoftValueTable

    values = SoftValueTable(q=q, v=np.zeros(4), alpha=0.7)
    pi = one_step_improvement(values)
    grid = simplex_grid(3, 140)  # 10011 points
    for s in range(4):
        grid_best = entropy_objective_on_simplex(q[s], grid, 0.7).max()
        mine = entropy_objective_on_simplex(q[s], pi.probs[s], 0.7)[0]
        assert mine >= grid_best - 1e-12
        assert grid_best >= mine - 1e-3  # the grid actually brackets the optimum


# --- multi-step objective -----------------------------------------------------


def test_h1_objective_equals_sac_improvement_objective():
    mdp = random_mdp(4, 3, 0.9, seed=3)
    pi_old = random_policy(4, 3, np.random.default_rng(1))
    values = soft_policy_evaluation(mdp, pi_old, alpha=0.3)
    pi = random_policy(4, 3, np.random.default_rng(2))
    hp = HorizonPolicy(1, (pi,))
    for s in range(4):
        direct = float((pi.probs[s] * (mdp.reward[s] - 0.3 * pi.log_probs()[s]
                                       + mdp.gamma * mdp.transition[s] @ values.v)).sum())
        assert multi_step_objective(mdp, hp, values, s, 0.3) == pytest.approx(direct, abs=1e-12)


@pytest.mark.parametrize("horizon", [1, 2, 4])
def test_old_policy_repeated_recovers_its_own_value(horizon):
    mdp = random_mdp(5, 2, 0.92, seed=8)
    pi_old = random_policy(5, 2, np.random.default_rng(4))
    values = soft_policy_evaluation(mdp, pi_old, alpha=0.25)
    hp = HorizonPolicy(horizon, tuple([pi_old] * horizon))
    objective = multi_step_objective_all(mdp, hp, values, 0.25)
    assert np.abs(objective - values.v).max() <= 1e-9


def test_two_step_objective_matches_monte_carlo():
    mdp = random_mdp(3, 2, 0.9, seed=13)
    rng = np.random.default_rng(6)
    hp = HorizonPolicy(2, (random_policy(3, 2, rng), random_policy(3, 2, rng)))
    pi_old = random_policy(3, 2, rng)
    values = soft_policy_evaluation(mdp, pi_old, alpha=0.4)
    exact = multi_step_objective(mdp, hp, values, 0, 0.4)
    stack = np.stack([p.probs for p in hp.step_policies])
    reps = [mc_soft_return(mdp, stack, 0, alpha=0.4, n_rollouts=20000, horizon=2,
                           seed=500 + k, value_tail=values.v) for k in range(10)]
    reps = np.asarray(reps)
    se = reps.std(ddof=1) / np.sqrt(len(reps))
    assert abs(reps.mean() - exact) <= 3 * se + 1e-9


# --- exact multi-step solver ---------------------------------------------------


def test_solver_horizon_one_degenerates_to_one_step_improvement():
    mdp = random_mdp(6, 3, 0.9, seed=17)
    pi_old = random_policy(6, 3, np.random.default_rng(7))
    values = soft_policy_evaluation(mdp, pi_old, alpha=0.2)
    result = solve_multi_step(mdp, values, 1, 0.2)
    assert np.abs(result.first_step.probs - one_step_improvement(values).probs).max() <= 1e-12


@pytest.mark.parametrize("horizon", [1, 2, 3, 5])
def test_solver_objective_dominates_old_value(horizon):
    mdp = random_mdp(7, 3, 0.93, seed=23)
    pi_old = random_policy(7, 3, np.random.default_rng(9))
    values = soft_policy_evaluation(mdp, pi_old, alpha=0.2)
    result = solve_multi_step(mdp, values, horizon, 0.2)
    assert (result.objective >= values.v - 1e-9).all()


def test_solver_objective_is_attained_by_its_own_policy():
    # the reported objective must equal the objective of the returned stack
    mdp = random_mdp(4, 2, 0.9, seed=31)
    pi_old = random_policy(4, 2, np.random.default_rng(10))
    values = soft_policy_evaluation(mdp, pi_old, alpha=0.35)
    result = solve_multi_step(mdp, values, 3, 0.35)
    recomputed = multi_step_objective_all(mdp, result.policy, values, 0.35)
    assert np.abs(recomputed - result.objective).max() <= 1e-9


def test_solver_matches_projected_gradient_ascent_small():
    mdp = random_mdp(2, 2, 0.9, seed=41)
    pi_old = random_policy(2, 2, np.random.default_rng(11))
    values = soft_policy_evaluation(mdp, pi_old, alpha=0.5)
    result = solve_multi_step(mdp, values, 2, 0.5)
    pga = projected_gradient_multi_step(mdp, values.v, 2, 0.5, restarts=500,
                                        rng=np.random.default_rng(12))
    assert np.abs(pga - result.objective).max() <= 1e-6


# --- distillation ---------------------------------------------------------------


def test_distill_horizon_one_is_classic_soft_improvement():
    mdp = random_mdp(5, 3, 0.9, seed=51)
    pi_old = random_policy(5, 3, np.random.default_rng(13))
    new = distill_improve(mdp, pi_old, 1, 0.2)
    classic = one_step_improvement(soft_policy_evaluation(mdp, pi_old, 0.2))
    assert np.abs(new.probs - classic.probs).max() <= 1e-12


def test_distill_improves_value_everywhere():
    mdp = random_mdp(6, 3, 0.95, seed=61)
    pi_old = random_policy(6, 3, np.random.default_rng(14))
    v_old = soft_policy_evaluation(mdp, pi_old, 0.2).v
    pi_new = distill_improve(mdp, pi_old, 3, 0.2)
    v_new = soft_policy_evaluation(mdp, pi_new, 0.2).v
    assert (v_new >= v_old - 1e-9).all()


def test_distill_fixed_point_at_soft_optimum():
    mdp = random_mdp(5, 3, 0.9, seed=71)
    _, _, pi_star = soft_value_iteration(mdp, alpha=0.2)
    for horizon in (1, 2, 4):
        again = distill_improve(mdp, pi_star, horizon, 0.2)
        assert np.abs(again.probs - pi_star.probs).max() <= 1e-8


# --- extended policy iteration ---------------------------------------------------


def test_extended_iteration_single_state_two_iterations():
    mdp = _single_loop_mdp(0.3, 0.8, n_actions=3)
    # make the actions distinguishable
    r = np.array([[0.1, 0.5, 0.9]])
    mdp = TabularMDP(1, 3, np.ones((1, 3, 1)), r, 0.8)
    pi0 = random_policy(1, 3, np.random.default_rng(15))
    pi, iters = extended_policy_iteration(mdp, pi0, horizon=1, alpha=0.5, tol=1e-10)
    assert iters <= 2
    v_star, q_star, pi_star = soft_value_iteration(mdp, alpha=0.5)
    assert np.abs(pi.probs - pi_star.probs).max() <= 1e-8


def test_extended_iteration_matches_soft_value_iteration():
    mdp = random_mdp(5, 3, 0.9, seed=81)
    pi0 = random_policy(5, 3, np.random.default_rng(16))
    pi, _ = extended_policy_iteration(mdp, pi0, horizon=2, alpha=0.2, tol=1e-8)
    v = soft_policy_evaluation(mdp, pi, 0.2).v
    v_star, _, _ = soft_value_iteration(mdp, alpha=0.2)
    assert np.abs(v - v_star).max() <= 1e-7


def test_extended_iteration_limit_is_horizon_independent():
    mdp = random_mdp(5, 3, 0.9, seed=91)
    pi0 = random_policy(5, 3, np.random.default_rng(17))
    vs = []
    for horizon in (1, 3):
        pi, _ = extended_policy_iteration(mdp, pi0, horizon, alpha=0.2, tol=1e-8)
        vs.append(soft_policy_evaluation(mdp, pi, 0.2).v)
    assert np.abs(vs[0] - vs[1]).max() <= 1e-7


def test_extended_iteration_nonconvergence_carries_last_iterate():
    mdp = random_mdp(6, 3, 0.97, seed=95)
    pi0 = random_policy(6, 3, np.random.default_rng(18))
    with pytest.raises(ConvergenceError) as err:
        extended_policy_iteration(mdp, pi0, horizon=1, alpha=0.2, tol=1e-14, max_iters=2)
    assert isinstance(err.value.last_iterate, TabularPolicy)
    assert err.value.iterations == 2


# --- horizon bound report ---------------------------------------------------------


def test_horizon_report_clean_on_random_mdp():
    mdp = random_mdp(4, 2, 0.9, seed=101)
    pi_old = random_policy(4, 2, np.random.default_rng(19))
    report = horizon_bound_report(mdp, pi_old, list(range(1, 9)), alpha=0.2)
    assert report.passed
    # gap bound formula: gamma^H * ||V_* - V_old||_inf
    gap_norm = np.abs(report.v_star - report.v_old).max()
    for h in report.horizons:
        assert report.gap_bound_by_h[h] == pytest.approx(0.9**h * gap_norm, rel=1e-12)
    # gaps shrink geometrically
    gaps = [np.abs(report.v_star - report.objective_by_h[h]).max() for h in report.horizons]
    for g_prev, g_next in zip(gaps, gaps[1:]):
        if g_prev > 1e-12:
            assert g_next <= g_prev * (0.9 + 0.01)


def test_horizon_report_bound_arithmetic():
    # gamma=0.9, ||V_* - V_old|| = 10, H = 3  ->  bound 7.29
    assert 0.9**3 * 10.0 == pytest.approx(7.29, abs=1e-12)


def test_large_horizon_closes_the_gap():
    mdp = random_mdp(3, 2, 0.5, seed=111)
    pi_old = random_policy(3, 2, np.random.default_rng(20))
    report = horizon_bound_report(mdp, pi_old, [30], alpha=0.2)
    assert report.gap_bound_by_h[30] < 1e-6
    assert np.abs(report.v_star - report.objective_by_h[30]).max() <= 1e-6


def test_horizon_report_serializes_to_json():
    import json

    mdp = random_mdp(3, 2, 0.9, seed=121)
    pi_old = random_policy(3, 2, np.random.default_rng(21))
    report = horizon_bound_report(mdp, pi_old, [1, 2, 3], alpha=0.2)
    blob = json.dumps(report.to_json(), sort_keys=True)
    parsed = json.loads(blob)
    assert parsed["passed"] is True
    assert set(parsed["objective_by_h"]) == {"1", "2", "3"}


def test_horizon_report_rejects_empty_or_bad_horizons():
    mdp = random_mdp(3, 2, 0.9, seed=131)
    pi_old = uniform_policy(3, 2)
    with pytest.raises(ValueError):
        horizon_bound_report(mdp, pi_old, [], alpha=0.2)
    with pytest.raises(ValueError):
        horizon_bound_report(mdp, pi_old, [0], alpha=0.2)


# --- policy table validation -------------------------------------------------------


def test_policy_rejects_bad_rows():
    with pytest.raises(ValueError):
        TabularPolicy(np.array([[0.5, 0.4]]))
    with pytest.raises(ValueError):
        TabularPolicy(np.array([[1.2, -0.2]]))


def test_policy_floors_zero_entries_for_finite_logs():
    pi = TabularPolicy(np.array([[1.0, 0.0]]))
    assert np.isfinite(pi.log_probs()).all()
