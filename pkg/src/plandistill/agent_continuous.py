"""Continuous planning agent: reparameterized rollouts through the model.

The improvement step rolls a batch of start states forward through the
learned Gaussian ensemble, one policy head per rollout depth. Actions and
model predictions are both reparameterized (value = mean + std * noise
with externally supplied noise), so the planning objective is an explicit
differentiable function of every head's parameters and one backward pass
yields the joint update for the whole stack. Per-element masks implement
the adaptive horizon: an element whose ensemble disagreement crosses the
threshold (or that lands on a terminal state) swaps its remaining return
for the discounted target-value bootstrap and stops contributing
gradients; its state is frozen so dead rows stay finite. Heads deeper than
the longest rollout in a batch never enter the tape at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import ImprovementReport, regularized_reward, supnorm_clip_scale, threshold_exceeded
from .autodiff import Tensor, concat
from .config import RunConfig
from .ensemble import GaussianEnsemble, train_gaussian
from .nets import Adam, Mlp, SquashedGaussianPolicy


@dataclass
class NoiseBundle:
    """Frozen randomness for one planning rollout (replayable for checks)."""

    action: np.ndarray  # [H, B, action_dim]
    model: np.ndarray  # [H, B, state_dim]
    member: np.ndarray  # [H, B] ints in [0, K)

    @classmethod
    def draw(cls, rng: np.random.Generator, horizon: int, batch: int,
             state_dim: int, action_dim: int, k: int) -> "NoiseBundle":
        return cls(action=rng.standard_normal((horizon, batch, action_dim)),
                   model=rng.standard_normal((horizon, batch, state_dim)),
                   member=rng.integers(0, k, size=(horizon, batch)))


class ContinuousCriticPair:
    """Twin Q networks plus V with a slowly tracking target copy."""

    def __init__(self, state_dim: int, action_dim: int, hidden, rng: np.random.Generator,
                 lr: float, tau: float, twin_q: bool):
        def spawn():
            return np.random.default_rng(rng.integers(0, 2**63))

        self.q1 = Mlp([state_dim + action_dim, *hidden, 1], spawn())
        self.q2 = Mlp([state_dim + action_dim, *hidden, 1], spawn())
        self.v = Mlp([state_dim, *hidden, 1], spawn())
        self.v_target = Mlp([state_dim, *hidden, 1], spawn())
        self.v_target.set_flat(self.v.get_flat())
        self.tau = float(tau)
        self.twin_q = bool(twin_q)
        q_params = self.q1.params + (self.q2.params if twin_q else [])
        self.opt_q = Adam(q_params, lr=lr)
        self.opt_v = Adam(self.v.params, lr=lr)

    def v_target_np(self, states: np.ndarray) -> np.ndarray:
        return self.v_target.forward_np(states)

    def v_target_t(self, states: Tensor) -> Tensor:
        return self.v_target(states)

    def q_min_np(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x = np.concatenate([states, actions], axis=1)
        q = self.q1.forward_np(x)
        if self.twin_q:
            q = np.minimum(q, self.q2.forward_np(x))
        return q

    def update(self, batch: dict, head0: SquashedGaussianPolicy, noise_rng: np.random.Generator,
               alpha: float, gamma: float) -> tuple[float, float]:
        states = batch["states"]
        actions = batch["actions"]
        rewards = batch["rewards"].reshape(-1, 1)
        next_states = batch["next_states"]
        not_done = (~batch["terminals"]).astype(np.float64).reshape(-1, 1)

        # Q regression to r + gamma * V_target(s'), targets detached
        y_q = rewards + gamma * not_done * self.v_target_np(next_states)
        sa = concat([Tensor(states), Tensor(actions)], axis=1)
        diff1 = self.q1(sa) - y_q
        loss_q = (diff1 * diff1).mean()
        if self.twin_q:
            diff2 = self.q2(sa) - y_q
            loss_q = loss_q + (diff2 * diff2).mean()
        loss_q.backward()
        self.opt_q.step([p.grad for p in self.opt_q.params])

        # V regression to E[min Q(s, a~) - alpha log pi(a~|s)] with a fresh draw
        fresh = noise_rng.standard_normal((len(states), head0.action_dim))
        a_t, logp_t = head0.sample(Tensor(states), fresh)
        y_v = self.q_min_np(states, a_t.data) - alpha * logp_t.data
        diff_v = self.v(Tensor(states)) - y_v
        loss_v = (diff_v * diff_v).mean()
        loss_v.backward()
        self.opt_v.step([p.grad for p in self.v.params])

        # target trails the online network
        self.v_target.set_flat((1.0 - self.tau) * self.v_target.get_flat()
                               + self.tau * self.v.get_flat())
        return float(loss_q.data), float(loss_v.data)


class ContinuousAgent:
    """Gradient-planning agent over a Gaussian ensemble model."""

    def __init__(self, state_dim: int, action_dim: int, config: RunConfig,
                 init_rng: np.random.Generator, reward_fn, terminal_fn=None,
                 model_target_fn=None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.config = config
        self.reward_fn = reward_fn  # (state Tensor [B,D], action Tensor [B,A]) -> [B,1]
        self.terminal_fn = terminal_fn or (lambda s: np.zeros(len(s), dtype=bool))
        self.model_target_fn = model_target_fn  # (states, next_states) -> targets
        hidden = (config.hidden_size, config.hidden_size)

        def spawn():
            return np.random.default_rng(init_rng.integers(0, 2**63))

        self.stack = [SquashedGaussianPolicy(state_dim, action_dim, hidden, spawn())
                      for _ in range(config.max_horizon)]
        params = [p for head in self.stack for p in head.params]
        self.optimizer = Adam(params, lr=config.learning_rate)
        self.critics = ContinuousCriticPair(state_dim, action_dim, hidden, init_rng,
                                            lr=config.learning_rate, tau=config.tau,
                                            twin_q=config.twin_q)
        self.ensemble: GaussianEnsemble | None = None

    @property
    def model_ready(self) -> bool:
        return self.ensemble is not None

    def act(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((1, self.action_dim))
        return self.stack[0].sample_np(np.atleast_2d(state), noise)[0]

    def act_mean(self, state: np.ndarray) -> np.ndarray:
        return self.stack[0].mean_action(np.atleast_2d(state))[0]

    def train_model(self, buffer, seed: int) -> None:
        cfg = self.config
        self.ensemble = train_gaussian(
            buffer, k=cfg.ensemble_size, epochs=cfg.model_epochs, lr=cfg.model_lr,
            seed=seed, hidden=(cfg.model_hidden_size, cfg.model_hidden_size),
            batch_size=min(cfg.model_batch_size, len(buffer)), max_points=cfg.model_window,
            logvar_min=cfg.model_logvar_min, target_transform=self.model_target_fn)

    def critic_update(self, batch: dict, noise_rng: np.random.Generator) -> tuple[float, float]:
        scaled = dict(batch)
        scaled["rewards"] = batch["rewards"] * self.config.reward_scale
        return self.critics.update(scaled, self.stack[0], noise_rng,
                                   self.config.alpha, self.config.gamma)

    # -- farsighted improvement ---------------------------------------------------

    def _fused_ensemble_weights(self):
        """Block-diagonal stacking of the K member networks.

        All members share one architecture, so one forward pass through a
        widened network (layer 1 concatenated, deeper layers block-diagonal)
        evaluates every member at once. The zero off-blocks are constants;
        gradients flow back into each member's own weight tensors. Rebuilt
        per improvement call (cheap) because the tape is not reusable across
        backward passes.
        """
        members = self.ensemble.members
        k = len(members)
        n_layers = len(members[0].weights)
        weights, biases = [], []
        for layer in range(n_layers):
            if layer == 0:
                weights.append(concat([m.weights[layer] for m in members], axis=1))
            else:
                rows = []
                for i, m in enumerate(members):
                    w = m.weights[layer]
                    h_in, h_out = w.data.shape
                    pads = []
                    if i > 0:
                        pads.append(Tensor(np.zeros((h_in, h_out * i))))
                    pads.append(w)
                    if i < k - 1:
                        pads.append(Tensor(np.zeros((h_in, h_out * (k - 1 - i)))))
                    rows.append(concat(pads, axis=1) if len(pads) > 1 else pads[0])
                weights.append(concat(rows, axis=0))
            biases.append(concat([m.biases[layer] for m in members], axis=1))
        return weights, biases

    def _ensemble_stats_stacked(self, s: Tensor, a: Tensor, fused=None):
        """All member means/variances at (s, a) as [B, K, D] tensors."""
        k = self.ensemble.k
        batch = s.data.shape[0]
        d = self.state_dim
        if fused is None:
            fused = self._fused_ensemble_weights()
        weights, biases = fused
        h = concat([s, a], axis=1)
        last = len(weights) - 1
        for i, (w, b) in enumerate(zip(weights, biases)):
            h = h @ w + b
            if i != last:
                h = h.tanh()
        out = h.reshape(batch, k, 2 * d)
        mean3 = out[:, :, :d] + s.reshape(batch, 1, d)
        var3 = out[:, :, d:].clip(self.ensemble.logvar_min, self.ensemble.logvar_max).exp()
        return mean3, var3

    @staticmethod
    def _ovr_from_stacked(mean3: Tensor, var3: Tensor, k: int) -> Tensor:
        """Total OvR disagreement per batch element from stacked member stats.

        Same moment-matched One-vs-Rest construction as ensemble.gaussian_ovr,
        vectorized over members; returns [B, 1].
        """
        mean_sum = mean3.sum(axis=1, keepdims=True)
        sq_sum = (mean3 * mean3).sum(axis=1, keepdims=True)
        var_sum = var3.sum(axis=1, keepdims=True)
        inv = 1.0 / (k - 1)
        rest_mean = (mean_sum - mean3) * inv
        rest_var = ((var_sum - var3) + (sq_sum - mean3 * mean3)) * inv \
            - rest_mean * rest_mean
        dev = mean3 - rest_mean
        kl_terms = ((rest_var / var3).log() + var3 / rest_var
                    + (dev * dev) / rest_var - 1.0) * 0.5
        return kl_terms.sum(axis=2).sum(axis=1, keepdims=True)

    def planning_rollout(self, states: np.ndarray, noise: NoiseBundle,
                         threshold: float | None = None, beta: float | None = None,
                         collect_steps: bool = False):
        """Build the batch planning objective on the tape with frozen noise.

        Returns (objective_mean, info) where info carries per-element
        achieved horizons, stop reasons, per-element objectives, and the
        number of heads engaged; with `collect_steps` the per-step
        (action, reward, log pi, u) tuples are recorded too (diagnostics
        only, off by default in the training hot path).
        """
        if not self.model_ready:
            raise RuntimeError("train the ensemble before planning")
        cfg = self.config
        threshold = cfg.threshold if threshold is None else threshold
        beta = cfg.beta if beta is None else beta
        k = self.ensemble.k
        batch = states.shape[0]
        step_log: list = []

        s = Tensor(np.atleast_2d(states))
        acc = Tensor(np.zeros((batch, 1)))
        alive = np.ones(batch, dtype=bool)
        achieved = np.full(batch, cfg.max_horizon, dtype=np.int64)
        stop_reason = np.array(["max_horizon"] * batch, dtype=object)
        discount = 1.0
        heads_engaged = 0
        fused = self._fused_ensemble_weights()

        for t in range(cfg.max_horizon):
            heads_engaged = t + 1
            action, log_prob = self.stack[t].sample(s, noise.action[t])
            mean3, var3 = self._ensemble_stats_stacked(s, action, fused)
            u = self._ovr_from_stacked(mean3, var3, k)
            onehot = (noise.member[t][:, None] == np.arange(k)[None, :])
            onehot3 = onehot.astype(np.float64)[:, :, None]  # [B, K, 1]
            pred = (onehot3 * (mean3 + var3**0.5 * noise.model[t][:, None, :])) \
                .sum(axis=1)  # [B, D]
            reward = self.reward_fn(s, action) * cfg.reward_scale

            over = threshold_exceeded(u.data[:, 0], threshold)
            terminal = self.terminal_fn(pred.data)
            stop_now = alive & (over | terminal)
            survive = alive & ~stop_now

            if survive.any():
                payoff = regularized_reward(reward, log_prob, u, cfg.alpha, beta)
                acc = acc + Tensor(survive.astype(np.float64)[:, None]) * payoff * discount
            if stop_now.any():
                m_stop = Tensor(stop_now.astype(np.float64)[:, None])
                boot = self.critics.v_target_t(pred)
                acc = acc + m_stop * boot * (discount * cfg.gamma)

            achieved[stop_now] = t
            stop_reason[stop_now & terminal] = "terminal"
            stop_reason[stop_now & ~terminal] = "threshold"
            if collect_steps:
                step_log.append((alive.copy(), action.data.copy(), reward.data.copy(),
                                 log_prob.data.copy(), u.data.copy()))

            alive = survive
            discount *= cfg.gamma
            if not alive.any():
                break
            if survive.all():
                s = pred
            else:  # freeze rows that are done so dead values stay finite
                keep = Tensor(survive.astype(np.float64)[:, None])
                s = keep * pred + (1.0 - keep) * s

        if alive.any():
            m_tail = Tensor(alive.astype(np.float64)[:, None])
            acc = acc + m_tail * self.critics.v_target_t(s) * discount

        objective = acc.mean()
        info = {
            "achieved": achieved,
            "stop_reason": stop_reason,
            "heads_engaged": heads_engaged,
            "per_element_objective": acc.data[:, 0].copy(),
        }
        if collect_steps:
            from .agent import RolloutRecord

            records = []
            for b in range(batch):
                steps = [(a_t[b], r_t[b, 0], lp_t[b, 0], u_t[b, 0])
                         for was_alive, a_t, r_t, lp_t, u_t in step_log if was_alive[b]]
                records.append(RolloutRecord(
                    start_state=states[b].copy(),
                    achieved_horizon=int(achieved[b]),
                    objective=float(acc.data[b, 0]),
                    stop_reason=str(stop_reason[b]),
                    steps=steps))
            info["records"] = records
        return objective, info

    def improve(self, batch_states: np.ndarray, noise_rng: np.random.Generator,
                threshold: float | None = None, beta: float | None = None,
                apply_update: bool = True) -> ImprovementReport:
        cfg = self.config
        states = np.atleast_2d(batch_states)
        noise = NoiseBundle.draw(noise_rng, cfg.max_horizon, states.shape[0],
                                 self.state_dim, self.action_dim,
                                 cfg.ensemble_size if self.ensemble is None
                                 else self.ensemble.k)
        objective, info = self.planning_rollout(states, noise, threshold, beta)
        if not np.isfinite(objective.data):
            raise FloatingPointError("planning objective went non-finite")
        loss = -objective
        loss.backward()
        head_grads = {}
        flat_grads = []
        for h, head in enumerate(self.stack):
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                     for p in head.params]
            head_grads[h] = np.concatenate([-g.ravel() for g in grads])
            flat_grads.extend(grads)
        scale = supnorm_clip_scale(flat_grads, cfg.grad_clip)
        if apply_update:
            self.optimizer.step([g * scale for g in flat_grads])
        return ImprovementReport(
            objective_mean=float(objective.data),
            mean_achieved_horizon=float(info["achieved"].mean()),
            head_grads=head_grads,
            clip_scale=scale)

    # -- snapshotting ----------------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "kind": "continuous",
            "stack": [head.net.get_flat().tolist() for head in self.stack],
            "q1": self.critics.q1.get_flat().tolist(),
            "q2": self.critics.q2.get_flat().tolist(),
            "v": self.critics.v.get_flat().tolist(),
            "v_target": self.critics.v_target.get_flat().tolist(),
            "ensemble": None if self.ensemble is None else
                [m.get_flat().tolist() for m in self.ensemble.members],
        }

    def load_snapshot(self, blob: dict) -> None:
        if blob.get("kind") != "continuous":
            raise ValueError("snapshot is not from a continuous agent")
        for head, flat in zip(self.stack, blob["stack"]):
            head.net.set_flat(np.asarray(flat))
        self.critics.q1.set_flat(np.asarray(blob["q1"]))
        self.critics.q2.set_flat(np.asarray(blob["q2"]))
        self.critics.v.set_flat(np.asarray(blob["v"]))
        self.critics.v_target.set_flat(np.asarray(blob["v_target"]))
        if blob.get("ensemble") is not None:
            cfg = self.config
            hidden = (cfg.model_hidden_size, cfg.model_hidden_size)
            members = []
            for flat in blob["ensemble"]:
                net = Mlp([self.state_dim + self.action_dim, *hidden, 2 * self.state_dim],
                          np.random.default_rng(0))
                net.set_flat(np.asarray(flat))
                members.append(net)
            self.ensemble = GaussianEnsemble(members, self.state_dim, self.action_dim,
                                             logvar_min=cfg.model_logvar_min)
