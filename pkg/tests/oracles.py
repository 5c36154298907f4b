"""Brute-force oracles used by the test suite.

Everything here deliberately avoids the code paths it checks: policy
evaluation is re-done by naive fixed-point iteration, the H-step planning
optimum is re-found by projected gradient ascent on the raw objective, and
probability densities are integrated numerically. Slow and dumb on purpose.
"""

from __future__ import annotations

import numpy as np

from plandistill.mdp import TabularMDP


def bellman_iteration_values(mdp: TabularMDP, policy_probs: np.ndarray, alpha: float,
                             tol: float = 1e-13, max_iters: int = 1_000_000) -> np.ndarray:
    """Soft policy evaluation by repeated Bellman backup from V = 0."""
    probs = np.asarray(policy_probs)
    log_probs = np.log(probs)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        q = mdp.reward + mdp.gamma * mdp.transition @ v
        v_new = (probs * (q - alpha * log_probs)).sum(axis=1)
        if np.abs(v_new - v).max() < tol:
            return v_new
        v = v_new
    raise AssertionError("oracle iteration failed to converge")


def entropy_objective_on_simplex(q_row: np.ndarray, probs: np.ndarray, alpha: float) -> np.ndarray:
    """E_pi[Q - alpha log pi] for rows of `probs`, with 0 log 0 = 0."""
    probs = np.atleast_2d(probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = probs * (q_row[None, :] - alpha * np.log(probs))
    terms = np.where(probs > 0.0, terms, 0.0)
    return terms.sum(axis=1)


def simplex_grid(n_actions: int, resolution: int) -> np.ndarray:
    """All points of the probability simplex with coordinates k/resolution."""
    if n_actions == 1:
        return np.ones((1, 1))
    points = []

    def fill(prefix, remaining, slots):
        if slots == 1:
            points.append(prefix + [remaining])
            return
        for k in range(remaining + 1):
            fill(prefix + [k], remaining - k, slots - 1)

    fill([], resolution, n_actions)
    return np.asarray(points, dtype=np.float64) / resolution


def project_rows_to_simplex(x: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of x onto the probability simplex."""
    n = x.shape[-1]
    u = np.sort(x, axis=-1)[..., ::-1]
    css = np.cumsum(u, axis=-1) - 1.0
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    rho = n - np.argmax(cond[..., ::-1], axis=-1) - 1
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho + 1)[..., None]
    return np.maximum(x - theta, 0.0)


def multi_step_objective_and_grad(mdp: TabularMDP, stacks: np.ndarray, v_old: np.ndarray,
                                  alpha: float):
    """Objective sum_s J^H_s and its gradient for batched policy stacks.

    `stacks` has shape [R, H, S, A] (R independent restarts). The objective
    and gradient are exact: forward state-distribution propagation plus the
    adjoint recursion, both derived from the definition of J^H alone.
    """
    floor = 1e-12
    stacks = np.maximum(stacks, floor)
    r_batch, horizon, n_s, n_a = stacks.shape
    log_stacks = np.log(stacks)

    dists = [np.broadcast_to(np.eye(n_s), (r_batch, n_s, n_s)).copy()]  # [R, s0, s]
    step_costs = []
    for h in range(horizon):
        pi = stacks[:, h]  # [R, S, A]
        c_h = ((mdp.reward[None] - alpha * log_stacks[:, h]) * pi).sum(axis=2)  # [R, S]
        step_costs.append(c_h)
        p_pi = np.einsum("rsa,sat->rst", pi, mdp.transition)
        dists.append(np.einsum("rus,rst->rut", dists[-1], p_pi))

    objective = np.zeros((r_batch, n_s))
    for h in range(horizon):
        objective += mdp.gamma**h * np.einsum("rus,rs->ru", dists[h], step_costs[h])
    objective += mdp.gamma**horizon * dists[horizon] @ v_old

    # adjoint pass: w_h(s) = d(sum_s0 J_s0)/d(mass at state s, step h)
    grads = np.zeros_like(stacks)
    w = mdp.gamma**horizon * np.broadcast_to(v_old, (r_batch, n_s)).copy()
    for h in reversed(range(horizon)):
        pi = stacks[:, h]
        mass = dists[h].sum(axis=1)  # [R, S]: column sums over start states
        future = np.einsum("sat,rt->rsa", mdp.transition, w)
        grads[:, h] = mass[:, :, None] * (
            mdp.gamma**h * (mdp.reward[None] - alpha * log_stacks[:, h] - alpha) + future)
        w = mdp.gamma**h * step_costs[h] + np.einsum("rsa,sat,rt->rs", pi, mdp.transition, w)
    return objective, grads


def projected_gradient_multi_step(mdp: TabularMDP, v_old: np.ndarray, horizon: int, alpha: float,
                                  restarts: int, rng: np.random.Generator,
                                  iters: int = 3000, step0: float = 0.5) -> np.ndarray:
    """Best per-start-state objective found by projected gradient ascent.

    Optimizes all restarts in parallel over the per-(step, state) simplices.
    Each restart carries its own step size with backtracking (halve on a
    non-improving move, gently grow otherwise); the entropy term is stiff
    near the simplex boundary, so fixed steps oscillate. Returns the
    elementwise-best objective vector across restarts.
    """
    floor = 1e-18
    stacks = rng.dirichlet(np.ones(mdp.n_actions),
                           size=(restarts, horizon, mdp.n_states))
    steps = np.full(restarts, step0)
    objective, grads = multi_step_objective_and_grad(mdp, stacks, v_old, alpha)
    totals = objective.sum(axis=1)
    best = objective.max(axis=0)
    for _ in range(iters):
        proposal = project_rows_to_simplex(
            stacks + steps[:, None, None, None] * grads)
        proposal = np.maximum(proposal, floor)
        proposal /= proposal.sum(axis=-1, keepdims=True)
        new_objective, new_grads = multi_step_objective_and_grad(mdp, proposal, v_old, alpha)
        new_totals = new_objective.sum(axis=1)
        accept = new_totals >= totals
        stacks = np.where(accept[:, None, None, None], proposal, stacks)
        grads = np.where(accept[:, None, None, None], new_grads, grads)
        totals = np.where(accept, new_totals, totals)
        steps = np.where(accept, np.minimum(steps * 1.1, 10.0), steps * 0.5)
        steps = np.maximum(steps, 1e-14)
        best = np.maximum(best, new_objective.max(axis=0))
    return best


def gaussian_kl_quadrature(mu_p: np.ndarray, var_p: np.ndarray, mu_q: np.ndarray,
                           var_q: np.ndarray, n_points: int = 400_001) -> float:
    """KL(N(mu_p, var_p) || N(mu_q, var_q)) for diagonal Gaussians, numerically.

    Integrates each dimension on a dense grid wide enough that the truncated
    tails are negligible at the 1e-9 level.
    """
    mu_p, var_p = np.atleast_1d(mu_p), np.atleast_1d(var_p)
    mu_q, var_q = np.atleast_1d(mu_q), np.atleast_1d(var_q)
    total = 0.0
    for mp, vp, mq, vq in zip(mu_p, var_p, mu_q, var_q):
        sp, sq = np.sqrt(vp), np.sqrt(vq)
        lo = min(mp - 14 * sp, mq - 14 * sq)
        hi = max(mp + 14 * sp, mq + 14 * sq)
        x = np.linspace(lo, hi, n_points)
        log_p = -0.5 * ((x - mp) ** 2 / vp) - 0.5 * np.log(2 * np.pi * vp)
        log_q = -0.5 * ((x - mq) ** 2 / vq) - 0.5 * np.log(2 * np.pi * vq)
        total += float(np.trapezoid(np.exp(log_p) * (log_p - log_q), x))
    return total


def sac_one_step_gradient(agent, states: np.ndarray, noise) -> np.ndarray:
    """Gradient of the one-step SAC improvement objective for head 0.

    Builds E[scale * r(s,a) - alpha log pi(a|s) + gamma V_target(s')] as flat
    straight-line code with the same frozen noise the planner would use:
    action reparameterized through head 0, next state reparameterized
    through the chosen ensemble member. No stop logic, no stack, no masks.
    Returns the concatenated gradient over head 0's parameters (ascent
    direction).
    """
    from plandistill.autodiff import Tensor
    from plandistill.pendulum import reward_terms

    cfg = agent.config
    head = agent.stack[0]
    k = agent.ensemble.k
    s = Tensor(np.atleast_2d(states))
    action, log_prob = head.sample(s, noise.action[0])
    member_means = []
    member_vars = []
    for i in range(k):
        mu, var = agent.ensemble.member_stats_t(i, s, action)
        member_means.append(mu)
        member_vars.append(var)
    chosen = noise.member[0]
    pred = None
    for i in range(k):
        mask = (chosen == i).astype(np.float64)[:, None]
        term = (member_means[i] + member_vars[i] ** 0.5 * noise.model[0]) * mask
        pred = term if pred is None else pred + term
    reward = reward_terms(s[:, 0:1], s[:, 1:2], action) * cfg.reward_scale
    objective = (reward - cfg.alpha * log_prob
                 + cfg.gamma * agent.critics.v_target(pred)).mean()
    objective.backward()
    return np.concatenate([np.zeros(p.data.size) if p.grad is None else p.grad.ravel()
                           for p in head.params])


def spearman_rho(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def ranks(v):
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(1, len(v) + 1)
        # average ranks over tied groups
        for val in np.unique(v):
            mask = v == val
            r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    return float((rx * ry).sum() / denom) if denom > 0 else 0.0


def sign_test_p_value(n_success: int, n_trials: int) -> float:
    """One-sided exact binomial tail P(X >= n_success) under p = 1/2."""
    from math import comb

    total = sum(comb(n_trials, k) for k in range(n_success, n_trials + 1))
    return total / 2.0**n_trials
