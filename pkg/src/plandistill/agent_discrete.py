"""Tabular planning agent: farsighted improvement by exact propagation.

Actions are discrete, so instead of sampling rollouts the improvement step
propagates the exact state-occupancy mass through the learned (mixture)
model, splitting off the mass that hits the stop condition at each step.
The objective is exactly the expectation of the sampled algorithm: mass
that survives a step collects the regularized reward there, mass that
stops (disagreement over threshold, or a terminal landing) collects the
discounted critic bootstrap at the next step instead, and the stopping
step's own reward is dropped, mirroring the break in the sampled loop.

The per-step policy tables are logits under a softmax, updated by gradient
ascent on the batch-weighted objective. The disagreement penalty is
piecewise constant in a discrete action, so it shapes the objective
through branch weights rather than contributing a gradient of its own.
"""

from __future__ import annotations

import numpy as np

from .agent import ImprovementReport, supnorm_clip_scale, threshold_exceeded
from .autodiff import Tensor
from .config import RunConfig
from .ensemble import CategoricalEnsemble, train_categorical
from .nets import Adam


class TabularCriticPair:
    """Q and V tables nudged toward the soft Bellman targets."""

    def __init__(self, n_states: int, n_actions: int, alpha: float, step: float):
        self.q = np.zeros((n_states, n_actions))
        self.v = np.zeros(n_states)
        self.alpha = alpha
        self.step = step

    def update(self, batch: dict, policy_probs: np.ndarray, gamma: float) -> float:
        states = batch["states"].astype(np.int64)
        actions = batch["actions"].astype(np.int64)
        next_states = batch["next_states"].astype(np.int64)
        next_v = np.where(batch["terminals"], 0.0, self.v[next_states])
        targets = batch["rewards"] + gamma * next_v
        td = targets - self.q[states, actions]
        # one damped move per unique (s, a): duplicates average instead of
        # stacking, which would multiply the effective step past 1
        n_actions = self.q.shape[1]
        flat = states * n_actions + actions
        uniq, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
        td_mean = np.bincount(inverse, weights=td) / counts
        self.q.ravel()[uniq] += self.step * td_mean
        log_probs = np.log(np.maximum(policy_probs, 1e-300))
        v_targets = (policy_probs * (self.q - self.alpha * log_probs)).sum(axis=1)
        uniq_s = np.unique(states)
        self.v[uniq_s] += self.step * (v_targets[uniq_s] - self.v[uniq_s])
        return float((td**2).mean())


class DiscreteAgent:
    """Tabular instantiation of the distilled-planning training loop."""

    def __init__(self, n_states: int, n_actions: int, config: RunConfig,
                 init_rng: np.random.Generator):
        self.n_states = n_states
        self.n_actions = n_actions
        self.config = config
        self.logits = [Tensor(0.01 * init_rng.standard_normal((n_states, n_actions)))
                       for _ in range(config.max_horizon)]
        self.optimizer = Adam(self.logits, lr=config.learning_rate)
        self.critics = TabularCriticPair(n_states, n_actions, config.alpha, config.critic_step)
        self.ensemble: CategoricalEnsemble | None = None
        self.reward_table: np.ndarray | None = None
        self.terminal_mask: np.ndarray | None = None

    def attach_env_tables(self, reward: np.ndarray, terminal_mask: np.ndarray) -> None:
        """The planner is given the true reward function (never the dynamics)."""
        self.reward_table = np.asarray(reward, dtype=np.float64) * self.config.reward_scale
        self.terminal_mask = np.asarray(terminal_mask, dtype=bool)

    @property
    def model_ready(self) -> bool:
        return self.ensemble is not None

    def head_probs(self, h: int = 0) -> np.ndarray:
        z = self.logits[h].data
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def act(self, state: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_actions, p=self.head_probs(0)[int(state)]))

    def greedy_table(self) -> np.ndarray:
        probs = self.head_probs(0)
        greedy = np.zeros_like(probs)
        greedy[np.arange(self.n_states), probs.argmax(axis=1)] = 1.0
        return greedy

    def train_model(self, buffer, seed: int) -> None:
        self.ensemble = train_categorical(
            buffer, k=self.config.ensemble_size, smoothing=self.config.smoothing,
            seed=seed, n_states=self.n_states, n_actions=self.n_actions)

    def critic_update(self, batch: dict) -> float:
        scaled = dict(batch)
        scaled["rewards"] = batch["rewards"] * self.config.reward_scale
        return self.critics.update(scaled, self.head_probs(0), self.config.gamma)

    # -- farsighted improvement ------------------------------------------------

    def _softmax_t(self, logits: Tensor):
        shift = logits.data.max(axis=1, keepdims=True)  # constant; softmax is shift-invariant
        e = (logits - shift).exp()
        total = e.sum(axis=1, keepdims=True)
        probs = e / total
        return probs, probs.log()

    def planning_objective(self, start_counts: np.ndarray, threshold: float | None = None):
        """Exact batch planning objective as a tape scalar, plus horizon stats.

        `start_counts` weights start states by how often they appear in the
        batch (normalized to a distribution internally). Returns
        (objective, expected achieved horizon).
        """
        if not self.model_ready:
            raise RuntimeError("train the ensemble before planning")
        cfg = self.config
        threshold = cfg.threshold if threshold is None else threshold
        mixture = self.ensemble.mixture_probs()  # [S, A, S]
        u_table = self.ensemble.uncertainty_table()  # [S, A]
        stop_u = threshold_exceeded(u_table, threshold).astype(np.float64)  # [S, A]
        keep_u = 1.0 - stop_u
        term_frac = mixture @ self.terminal_mask.astype(np.float64)  # [S, A]
        boot_v = np.where(self.terminal_mask, 0.0, self.critics.v)  # V(terminal) = 0
        bootstrap = mixture @ boot_v  # [S, A]
        surviving_flow = mixture * (~self.terminal_mask)[None, None, :]  # [S, A, S]

        weights = np.asarray(start_counts, dtype=np.float64)
        mass = Tensor((weights / weights.sum()).reshape(1, -1))  # [1, S]
        total = None
        expected_horizon = 0.0
        discount = 1.0
        for t in range(cfg.max_horizon):
            probs, log_probs = self._softmax_t(self.logits[t])
            payoff = (-cfg.alpha) * log_probs + (self.reward_table - cfg.beta * u_table)
            # surviving branches that also land on a non-terminal state
            # collect the step payoff; everything else bootstraps next step
            step_gain = (probs * (payoff * (keep_u * (1.0 - term_frac)))).sum(axis=1)
            boot_gain = (probs * (bootstrap * stop_u)).sum(axis=1)
            contrib = (mass * step_gain.reshape(1, -1)).sum() * discount \
                + (mass * boot_gain.reshape(1, -1)).sum() * (discount * cfg.gamma)
            total = contrib if total is None else total + contrib

            stop_frac = stop_u + keep_u * term_frac  # branch stop probability
            stopped_now = float((mass.data * (probs.data * stop_frac).sum(axis=1)).sum())
            expected_horizon += t * stopped_now

            cont = probs * keep_u  # [S, A]; terminal landings drop out via the flow
            flow = None
            for a in range(self.n_actions):
                part = cont[:, a:a + 1] * surviving_flow[:, a, :]
                flow = part if flow is None else flow + part
            mass = mass @ flow
            discount *= cfg.gamma
            if float(mass.data.sum()) == 0.0:
                break

        tail_mass = float(mass.data.sum())
        total = total + (mass * boot_v.reshape(1, -1)).sum() * discount
        expected_horizon += cfg.max_horizon * tail_mass
        return total, expected_horizon

    def improve(self, batch_states: np.ndarray, threshold: float | None = None,
                apply_update: bool = True) -> ImprovementReport:
        counts = np.bincount(np.asarray(batch_states, dtype=np.int64),
                             minlength=self.n_states).astype(np.float64)
        objective, expected_horizon = self.planning_objective(counts, threshold)
        loss = -objective
        loss.backward()
        grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                 for t in self.logits]
        scale = supnorm_clip_scale(grads, self.config.grad_clip)
        if apply_update:
            self.optimizer.step([g * scale for g in grads])
        return ImprovementReport(
            objective_mean=float(objective.data),
            mean_achieved_horizon=float(expected_horizon),
            head_grads={h: -g for h, g in enumerate(grads)},
            clip_scale=scale)

    # -- snapshotting -------------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "kind": "discrete",
            "logits": [t.data.tolist() for t in self.logits],
            "critic_q": self.critics.q.tolist(),
            "critic_v": self.critics.v.tolist(),
            "ensemble_counts": None if self.ensemble is None else self.ensemble.counts.tolist(),
            "smoothing": self.config.smoothing,
        }

    def load_snapshot(self, blob: dict) -> None:
        if blob.get("kind") != "discrete":
            raise ValueError("snapshot is not from a discrete agent")
        for t, rows in zip(self.logits, blob["logits"]):
            t.data = np.asarray(rows, dtype=np.float64)
        self.critics.q = np.asarray(blob["critic_q"], dtype=np.float64)
        self.critics.v = np.asarray(blob["critic_v"], dtype=np.float64)
        if blob.get("ensemble_counts") is not None:
            self.ensemble = CategoricalEnsemble(np.asarray(blob["ensemble_counts"]),
                                                blob["smoothing"])
