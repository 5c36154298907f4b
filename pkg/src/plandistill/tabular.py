"""Exact maximum-entropy policy iteration on tabular MDPs.

This is the theory tier. Policy evaluation is a linear solve, the H-step
planning problem is solved in closed form by backward soft induction, and
distillation keeps only the first-step slice of the H-step solution. All
improvement and convergence claims about that construction are checked
here with exact arithmetic, against brute-force oracles living in the
test suite.

Conventions: alpha is the entropy temperature and is kept explicit
everywhere; policies are clamped to a tiny positive floor before logs so
log pi is always finite for user-supplied tables (softmax outputs are
already strictly positive).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConvergenceError
from .mdp import TabularMDP

PROB_FLOOR = 1e-300
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TabularPolicy:
    """Stochastic policy table: probs[s, a] = pi(a|s), rows on the simplex."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValueError(f"policy table must be 2-D, got shape {probs.shape}")
        if not np.isfinite(probs).all() or (probs < 0).any():
            raise ValueError("policy entries must be finite and nonnegative")
        if not np.allclose(probs.sum(axis=1), 1.0, rtol=0.0, atol=ROW_SUM_TOL):
            raise ValueError("policy rows must sum to 1 within 1e-12")
        probs = np.maximum(probs, PROB_FLOOR)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def log_probs(self) -> np.ndarray:
        return np.log(self.probs)

    def greedy_probs(self) -> np.ndarray:
        """Deterministic table putting all mass on the argmax action."""
        greedy = np.zeros_like(self.probs)
        greedy[np.arange(self.n_states), self.probs.argmax(axis=1)] = 1.0
        return greedy


def uniform_policy(n_states: int, n_actions: int) -> TabularPolicy:
    return TabularPolicy(np.full((n_states, n_actions), 1.0 / n_actions))


def random_policy(n_states: int, n_actions: int, rng: np.random.Generator) -> TabularPolicy:
    probs = rng.dirichlet(np.ones(n_actions), size=n_states)
    probs = np.maximum(probs, 1e-8)
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class SoftValueTable:
    """Entropy-augmented Q and V for some evaluated policy."""

    q: np.ndarray  # [S, A]
    v: np.ndarray  # [S]
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.q).all() and np.isfinite(self.v).all()):
            raise ValueError("value tables must be finite")


@dataclass(frozen=True)
class HorizonPolicy:
    """Per-step policies over a planning horizon; step h governs a_{t+h}."""

    horizon: int
    step_policies: tuple

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        steps = tuple(self.step_policies)
        if len(steps) != self.horizon:
            raise ValueError("need exactly one policy per horizon step")
        object.__setattr__(self, "step_policies", steps)


@dataclass(frozen=True)
class PlanningResult:
    """Solution of the H-step planning problem for every start state at once."""

    policy: HorizonPolicy
    objective: np.ndarray  # [S]
    first_step: TabularPolicy

    def __post_init__(self):
        if self.first_step is not self.policy.step_policies[0]:
            raise ValueError("first_step must be the horizon policy's step-0 slice")


def entropy_reward(mdp: TabularMDP, policy: TabularPolicy, alpha: float) -> np.ndarray:
    """r_pi(s) = sum_a pi(a|s) (r(s,a) - alpha log pi(a|s))."""
    return np.einsum("sa,sa->s", policy.probs, mdp.reward - alpha * policy.log_probs())


def soft_policy_evaluation(mdp: TabularMDP, policy: TabularPolicy, alpha: float) -> SoftValueTable:
    """Exact fixed point of the entropy-augmented Bellman backup for `policy`.

    Solves V = r_pi + gamma P_pi V directly, then Q = r + gamma P V. With
    gamma < 1 the system matrix I - gamma P_pi is strictly diagonally
    dominant, so the solve cannot be singular.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    r_pi = entropy_reward(mdp, policy, alpha)
    p_pi = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)
    q = mdp.reward + mdp.gamma * mdp.transition @ v
    return SoftValueTable(q=q, v=v, alpha=alpha)


def softmax_policy(q: np.ndarray, alpha: float) -> TabularPolicy:
    """Row-wise softmax of Q/alpha with max-shift stabilization."""
    z = q / alpha
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return TabularPolicy(p / p.sum(axis=1, keepdims=True))


def soft_max_operator(q: np.ndarray, alpha: float) -> np.ndarray:
    """alpha * logsumexp(Q/alpha) per state: the entropy-augmented max."""
    z = q / alpha
    zmax = z.max(axis=1)
    return alpha * (np.log(np.exp(z - zmax[:, None]).sum(axis=1)) + zmax)


def one_step_improvement(values: SoftValueTable) -> TabularPolicy:
    """Closed-form maximizer of E_pi[Q - alpha log pi]: softmax(Q/alpha)."""
    return softmax_policy(values.q, values.alpha)


def multi_step_objective(mdp: TabularMDP, hp: HorizonPolicy, v_old: SoftValueTable,
                         state: int, alpha: float) -> float:
    """Exact H-step entropy-augmented objective from one start state.

    Propagates the state distribution forward under the true dynamics,
    accumulating gamma^i * E[r - alpha log pi_i] with the step-i policy at
    the step-i state, and closes with gamma^H * E[V_old(s_H)].
    """
    return float(multi_step_objective_all(mdp, hp, v_old, alpha)[state])


def multi_step_objective_all(mdp: TabularMDP, hp: HorizonPolicy, v_old: SoftValueTable,
                             alpha: float) -> np.ndarray:
    """`multi_step_objective` for every start state at once."""
    dist = np.eye(mdp.n_states)  # dist[s0, s] = P(s at step i | started in s0)
    total = np.zeros(mdp.n_states)
    discount = 1.0
    for pi in hp.step_policies:
        step_r = entropy_reward(mdp, pi, alpha)
        total += discount * dist @ step_r
        p_pi = np.einsum("sa,sat->st", pi.probs, mdp.transition)
        dist = dist @ p_pi
        discount *= mdp.gamma
    total += discount * dist @ v_old.v
    return total


def solve_multi_step(mdp: TabularMDP, v_old: SoftValueTable, horizon: int,
                     alpha: float) -> PlanningResult:
    """Exact maximizer of the H-step objective for every start state at once.

    Backward soft induction: starting from V_H = V_old, each stage takes
    Q_h = r + gamma P V_{h+1}, the stage policy softmax(Q_h/alpha), and the
    stage value alpha*logsumexp(Q_h/alpha). Per-step policies make this the
    unconstrained optimum over nonstationary policies; optimality against a
    direct gradient search on the objective is enforced in the tests rather
    than assumed.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    v_next = v_old.v
    steps = []
    for _ in range(horizon):
        q_h = mdp.reward + mdp.gamma * mdp.transition @ v_next
        steps.append(softmax_policy(q_h, alpha))
        v_next = soft_max_operator(q_h, alpha)
    steps.reverse()
    hp = HorizonPolicy(horizon=horizon, step_policies=tuple(steps))
    return PlanningResult(policy=hp, objective=v_next, first_step=hp.step_policies[0])


def distill_improve(mdp: TabularMDP, pi_old: TabularPolicy, horizon: int,
                    alpha: float) -> TabularPolicy:
    """One extended improvement step: plan H steps ahead, keep only step 0.

    Evaluates pi_old exactly, solves the H-step problem bootstrapped with
    V_old, and discards every step policy except the first. Horizon 1
    recovers the classic one-step softmax improvement.
    """
    values = soft_policy_evaluation(mdp, pi_old, alpha)
    return solve_multi_step(mdp, values, horizon, alpha).first_step


def extended_policy_iteration(mdp: TabularMDP, pi0: TabularPolicy, horizon: int, alpha: float,
                              tol: float = 1e-8, max_iters: int = 10_000):
    """Alternate exact evaluation and H-step distillation to a fixed point.

    Stops when the sup-norm change of V between iterations drops below
    `tol`; returns (policy, iterations). Raises ConvergenceError carrying
    the last iterate if the budget runs out.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    pi = pi0
    values = soft_policy_evaluation(mdp, pi, alpha)
    for iteration in range(1, max_iters + 1):
        pi = solve_multi_step(mdp, values, horizon, alpha).first_step
        new_values = soft_policy_evaluation(mdp, pi, alpha)
        if float(np.abs(new_values.v - values.v).max()) < tol:
            return pi, iteration
        values = new_values
    raise ConvergenceError(
        f"extended policy iteration did not reach tol={tol} in {max_iters} iterations",
        last_iterate=pi, iterations=max_iters)


def soft_value_iteration(mdp: TabularMDP, alpha: float, tol: float = 1e-12,
                         max_iters: int = 1_000_000):
    """Fixed point of the entropy-augmented optimality backup.

    Returns (v_star, q_star, pi_star). This is the oracle the extended
    iteration is checked against: an entirely different route to V_*.
    """
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        q = mdp.reward + mdp.gamma * mdp.transition @ v
        v_new = soft_max_operator(q, alpha)
        if float(np.abs(v_new - v).max()) < tol * (1.0 - mdp.gamma):
            q = mdp.reward + mdp.gamma * mdp.transition @ v_new
            return v_new, q, softmax_policy(q, alpha)
        v = v_new
    raise ConvergenceError(f"soft value iteration did not converge in {max_iters} iterations",
                           last_iterate=v, iterations=max_iters)


@dataclass(frozen=True)
class BoundViolation:
    """One failed inequality in a horizon bound report."""

    kind: str
    horizon: int
    state: int
    magnitude: float

    def to_json(self) -> dict:
        return {"kind": self.kind, "horizon": self.horizon,
                "state": self.state, "magnitude": self.magnitude}


@dataclass(frozen=True)
class HorizonBoundReport:
    """Per-horizon objectives, distilled values, and the geometric gap bound.

    For each requested H this records J^H(s) (the planning objective),
    V^{pi_new}(s) for the distilled policy, V_*(s), and the bound
    gamma^H * ||V_* - V_old||_inf on the remaining gap. Violated
    inequalities are collected as structured records, never raised.
    """

    horizons: tuple
    alpha: float
    gamma: float
    v_old: np.ndarray
    v_star: np.ndarray
    objective_by_h: dict  # H -> [S]
    v_new_by_h: dict  # H -> [S]
    gap_bound_by_h: dict  # H -> float
    r_max_encountered: float
    violations: tuple

    SLACK = 1e-9

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "horizons": list(self.horizons),
            "alpha": self.alpha,
            "gamma": self.gamma,
            "v_old": self.v_old.tolist(),
            "v_star": self.v_star.tolist(),
            "objective_by_h": {str(h): self.objective_by_h[h].tolist() for h in self.horizons},
            "v_new_by_h": {str(h): self.v_new_by_h[h].tolist() for h in self.horizons},
            "gap_bound_by_h": {str(h): self.gap_bound_by_h[h] for h in self.horizons},
            "r_max_encountered": self.r_max_encountered,
            "r_max_tail_by_h": {
                str(h): self.gamma**h * self.r_max_encountered / (1.0 - self.gamma)
                for h in self.horizons},
            "violations": [v.to_json() for v in self.violations],
            "passed": self.passed,
        }


def horizon_bound_report(mdp: TabularMDP, pi_old: TabularPolicy, horizons: Sequence[int],
                         alpha: float) -> HorizonBoundReport:
    """Exercise the horizon inequalities on one MDP and report violations.

    Checks, each with 1e-9 slack: the objective is nondecreasing across the
    listed horizons; the distilled policy's value dominates the objective;
    and the optimality gap V_* - J^H is below gamma^H * ||V_* - V_old||_inf.
    The loose tail bound built from the largest entropy-augmented reward
    actually encountered is reported informationally (it is not assertable:
    the augmented reward is unbounded over all stochastic policies).
    """
    horizons = tuple(int(h) for h in horizons)
    if not horizons or any(h < 1 for h in horizons):
        raise ValueError("horizons must be a nonempty list of integers >= 1")
    values_old = soft_policy_evaluation(mdp, pi_old, alpha)
    v_star, _, _ = soft_value_iteration(mdp, alpha)
    gap_norm = float(np.abs(v_star - values_old.v).max())

    objective_by_h: dict = {}
    v_new_by_h: dict = {}
    gap_bound_by_h: dict = {}
    violations = []
    seen_policies = [pi_old]
    slack = HorizonBoundReport.SLACK

    for h in sorted(set(horizons)):
        result = solve_multi_step(mdp, values_old, h, alpha)
        v_new = soft_policy_evaluation(mdp, result.first_step, alpha).v
        objective_by_h[h] = result.objective
        v_new_by_h[h] = v_new
        gap_bound_by_h[h] = mdp.gamma**h * gap_norm
        seen_policies.extend(result.policy.step_policies)

        for s in range(mdp.n_states):
            if v_new[s] < result.objective[s] - slack:
                violations.append(BoundViolation("value_below_objective", h, s,
                                                 float(result.objective[s] - v_new[s])))
            gap = v_star[s] - result.objective[s]
            if gap > gap_bound_by_h[h] + slack:
                violations.append(BoundViolation("gap_bound_exceeded", h, s,
                                                 float(gap - gap_bound_by_h[h])))

    ordered = sorted(set(horizons))
    for h_prev, h_next in zip(ordered, ordered[1:]):
        worse = objective_by_h[h_prev] - objective_by_h[h_next]
        for s in np.flatnonzero(worse > slack):
            violations.append(BoundViolation("objective_not_monotone", h_next, int(s),
                                             float(worse[s])))

    r_max = max(float((mdp.reward - alpha * pi.log_probs()).max()) for pi in seen_policies)
    return HorizonBoundReport(
        horizons=horizons, alpha=alpha, gamma=mdp.gamma, v_old=values_old.v, v_star=v_star,
        objective_by_h=objective_by_h, v_new_by_h=v_new_by_h, gap_bound_by_h=gap_bound_by_h,
        r_max_encountered=r_max, violations=tuple(violations))
