"""Finite tabular MDPs with exact dynamics.

These are the ground truth for the exact tier: transition tensors are
explicit, so policy evaluation and planning can be done by linear algebra
instead of sampling. Terminal states are modeled as absorbing self-loops
with zero reward, which keeps infinite-horizon sums well defined without
any episode bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Transition:
    """One (s, a, r, s', terminal) record, tabular or continuous."""

    state: object
    action: object
    reward: float
    next_state: object
    terminal: bool = False

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError(f"non-finite reward {self.reward!r}")


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP with explicit dynamics tensor and reward table.

    transition[s, a, s'] is the probability of landing in s' after taking
    action a in state s; every transition[s, a, :] row sums to one.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray  # [S, A, S]
    reward: np.ndarray  # [S, A]
    gamma: float
    terminal_mask: np.ndarray = field(default=None)  # [S] bool

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("n_states and n_actions must be >= 1")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie strictly in (0, 1), got {self.gamma}")
        transition = np.asarray(self.transition, dtype=np.float64)
        reward = np.asarray(self.reward, dtype=np.float64)
        if transition.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(f"transition tensor has shape {transition.shape}")
        if reward.shape != (self.n_states, self.n_actions):
            raise ValueError(f"reward table has shape {reward.shape}")
        if not np.isfinite(reward).all():
            raise ValueError("rewards must be finite")
        if (transition < 0).any():
            raise ValueError("transition probabilities must be nonnegative")
        row_sums = transition.sum(axis=2)
        if not np.allclose(row_sums, 1.0, rtol=0.0, atol=ROW_SUM_TOL):
            worst = float(np.abs(row_sums - 1.0).max())
            raise ValueError(f"transition rows must sum to 1 (worst deviation {worst:.3g})")
        if self.terminal_mask is None:
            mask = np.zeros(self.n_states, dtype=bool)
        else:
            mask = np.asarray(self.terminal_mask, dtype=bool)
            if mask.shape != (self.n_states,):
                raise ValueError(f"terminal_mask has shape {mask.shape}")
        for s in np.flatnonzero(mask):
            expected = np.zeros(self.n_states)
            expected[s] = 1.0
            if not (np.allclose(transition[s], expected[None, :], atol=ROW_SUM_TOL)
                    and np.allclose(reward[s], 0.0)):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")
        transition.setflags(write=False)
        reward.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "terminal_mask", mask)

    def sample_next(self, state: int, action: int, rng: np.random.Generator) -> int:
        """Draw s' ~ p(.|state, action)."""
        return int(rng.choice(self.n_states, p=self.transition[state, action]))


def random_mdp(n_states: int, n_actions: int, gamma: float, seed: int) -> TabularMDP:
    """Generate a random MDP: Dirichlet(1) transition rows, rewards in [0, 1].

    Identical seeds produce bit-identical MDPs. Keeping rewards in [0, 1]
    keeps value scales (and hence test tolerances) small.
    """
    if n_states < 1 or n_actions < 1:
        raise ValueError("n_states and n_actions must be >= 1")
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie strictly in (0, 1), got {gamma}")
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    # Dirichlet rows sum to 1 up to rounding; renormalize to the 1e-12 contract.
    transition = transition / transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(n_states, n_actions, transition, reward, gamma)


def make_chain(n_states: int = 6, gamma: float = 0.95, advance_prob: float = 0.9,
               goal_reward: float = 10.0, retreat_reward: float = 0.1) -> TabularMDP:
    """Chain walk: action 1 advances toward the rewarding end, action 0 retreats.

    Advancing from the last state keeps paying the goal reward, so the
    optimal behavior is to march right and stay there. Retreating teleports
    to state 0 for a small immediate reward, a classic myopic trap.
    """
    n_actions = 2
    transition = np.zeros((n_states, n_actions, n_states))
    reward = np.zeros((n_states, n_actions))
    for s in range(n_states):
        # action 0: retreat to the start
        transition[s, 0, 0] = 1.0
        reward[s, 0] = retreat_reward
        # action 1: advance with some slip back to the same state
        nxt = min(s + 1, n_states - 1)
        transition[s, 1, nxt] += advance_prob
        transition[s, 1, s] += 1.0 - advance_prob
        reward[s, 1] = goal_reward if s == n_states - 1 else 0.0
    return TabularMDP(n_states, n_actions, transition, reward, gamma)


def make_gridworld(size: int = 4, gamma: float = 0.95, slip: float = 0.1,
                   goal_reward: float = 10.0, step_reward: float = 0.0) -> TabularMDP:
    """Square gridworld with 4 moves, slip noise, and a rewarding goal corner.

    The goal cell is not terminal: reaching it keeps paying, mirroring the
    chain construction so both discrete environments are continuing tasks.
    """
    n_states = size * size
    n_actions = 4
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    goal = n_states - 1
    transition = np.zeros((n_states, n_actions, n_states))
    reward = np.zeros((n_states, n_actions))

    def clamp_move(r, c, dr, dc):
        return min(max(r + dr, 0), size - 1), min(max(c + dc, 0), size - 1)

    for s in range(n_states):
        r, c = divmod(s, size)
        for a, (dr, dc) in enumerate(moves):
            nr, nc = clamp_move(r, c, dr, dc)
            transition[s, a, nr * size + nc] += 1.0 - slip
            # slip: stay put
            transition[s, a, s] += slip
            reward[s, a] = goal_reward if s == goal else step_reward
    return TabularMDP(n_states, n_actions, transition, reward, gamma)


def exact_policy_return(mdp: TabularMDP, policy_probs: np.ndarray) -> np.ndarray:
    """Plain (entropy-free) discounted return of a stochastic policy, per state.

    Solves V = r_pi + gamma * P_pi V exactly. Used to score greedy policies,
    whose entropy term is zero anyway.
    """
    probs = np.asarray(policy_probs, dtype=np.float64)
    r_pi = np.einsum("sa,sa->s", probs, mdp.reward)
    p_pi = np.einsum("sa,sat->st", probs, mdp.transition)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


def mc_soft_return(mdp: TabularMDP, policy, state: int, alpha: float,
                   n_rollouts: int, horizon: int, seed: int,
                   value_tail: Optional[np.ndarray] = None) -> float:
    """Monte-Carlo estimate of the entropy-augmented return from one state.

    Simulates `n_rollouts` truncated trajectories under the true dynamics and
    averages sum_t gamma^t (r - alpha * log pi). `horizon` should be chosen so
    the truncated tail gamma^horizon * r_max is below the tolerance in play.
    If `value_tail` is given, gamma^horizon * value_tail[s_horizon] is added
    to each rollout (used to estimate finite-horizon bootstrapped objectives).

    `policy` may be a probability table [S, A], a stack of per-step tables
    [horizon, S, A], or any object exposing such a table as `.probs`.
    """
    probs = np.asarray(getattr(policy, "probs", policy), dtype=np.float64)
    if probs.ndim == 2:
        step_policies = [probs] * horizon
    else:
        step_policies = [probs[h] for h in range(horizon)]
    if len(step_policies) < horizon:
        raise ValueError("need one policy per simulated step")
    if n_rollouts < 1 or horizon < 0:
        raise ValueError("n_rollouts must be >= 1 and horizon >= 0")
    rng = np.random.default_rng(seed)
    states = np.full(n_rollouts, state, dtype=np.int64)
    totals = np.zeros(n_rollouts)
    discount = 1.0
    for t in range(horizon):
        pi_t = step_policies[t]
        with np.errstate(divide="ignore"):
            log_pi = np.log(pi_t)
        # vectorized categorical draw: invert the per-state action CDF
        cdf = np.cumsum(pi_t, axis=1)
        u = rng.random(n_rollouts)
        actions = (u[:, None] > cdf[states]).sum(axis=1)
        actions = np.minimum(actions, mdp.n_actions - 1)
        totals += discount * (mdp.reward[states, actions] - alpha * log_pi[states, actions])
        next_cdf = np.cumsum(mdp.transition, axis=2)
        u2 = rng.random(n_rollouts)
        states = (u2[:, None] > next_cdf[states, actions]).sum(axis=1)
        states = np.minimum(states, mdp.n_states - 1)
        discount *= mdp.gamma
    if value_tail is not None:
        totals += discount * np.asarray(value_tail)[states]
    return float(totals.mean())
