"""The outer training loop: collect, refit models, update critics and stack.

One iteration per environment step: act with head 0, store the transition,
refit the ensemble on schedule, then run the configured number of critic
and farsighted-improvement updates. Metrics are flushed one row per model
interval; on an unhandled error the partial artifact is flushed before the
exception propagates. Every random draw comes from a named substream of
the run seed, so two runs with the same configuration are byte-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .agent_continuous import ContinuousAgent
from .agent_discrete import DiscreteAgent
from .artifact import MetricsRow, save_artifact
from .config import RunConfig
from .envs import PendulumAdapter, TabularEnvAdapter, make_env
from .pendulum import reward_terms
from .rng import StreamBundle


@dataclass
class TrainResult:
    config: RunConfig
    rows: list
    snapshot: dict
    final_return_stochastic: float
    final_return_mean_action: float
    out_dir: str | None = None


class _IntervalStats:
    """Accumulators reset at every metrics row."""

    def __init__(self):
        self.episode_returns: list[float] = []
        self.horizons: list[float] = []
        self.model_errors: list[float] = []
        self.critic_losses: list[float] = []
        self.objectives: list[float] = []

    @staticmethod
    def _mean(values: list[float]) -> float:
        return float(np.mean(values)) if values else float("nan")

    def row(self, env_step: int) -> MetricsRow:
        return MetricsRow(
            env_step=env_step,
            episode_return_mean=self._mean(self.episode_returns),
            achieved_horizon_mean=self._mean(self.horizons),
            model_error_l2_mean=self._mean(self.model_errors),
            critic_loss=self._mean(self.critic_losses),
            policy_objective=self._mean(self.objectives),
            wall_ms=0.0)


def _build_agent(env, config: RunConfig, init_rng: np.random.Generator):
    if env.kind == "discrete":
        agent = DiscreteAgent(env.n_states, env.n_actions, config, init_rng)
        agent.attach_env_tables(env.mdp.reward, env.mdp.terminal_mask)
        return agent
    def pendulum_reward_t(s, a):
        return reward_terms(s[:, 0:1], s[:, 1:2], a)

    return ContinuousAgent(env.state_dim, env.action_dim, config, init_rng,
                           reward_fn=pendulum_reward_t,
                           model_target_fn=getattr(env, "model_target", None))


def _interval_model_errors(env, agent, visited: list) -> list[float]:
    """One-step model errors for the interval's collected transitions.

    Continuous: L2 norm between the ensemble mean prediction and the
    observed next state, batched over the whole interval. Tabular: L2 norm
    between the mixture row and the true transition row (the true MDP is a
    diagnostic oracle here, not a training signal). All transitions are
    scored against the ensemble live at flush time.
    """
    if not visited or not agent.model_ready:
        return []
    if isinstance(env, TabularEnvAdapter):
        s = np.array([tr.state for tr in visited], dtype=np.int64)
        a = np.array([tr.action for tr in visited], dtype=np.int64)
        rows = agent.ensemble.mixture_probs()[s, a]
        true_rows = env.mdp.transition[s, a]
        return list(np.linalg.norm(rows - true_rows, axis=1))
    s = np.array([tr.state for tr in visited], dtype=np.float64)
    a = np.array([tr.action for tr in visited], dtype=np.float64)
    s2 = np.array([tr.next_state for tr in visited], dtype=np.float64)
    if agent.model_target_fn is not None:  # measure in the model's own frame
        s2 = agent.model_target_fn(s, s2)
    pred = agent.ensemble.mean_prediction_np(s, a)
    return list(np.linalg.norm(pred - s2, axis=1))


def evaluate_policy(env, agent, rng: np.random.Generator, episodes: int = 5,
                    mode: str = "stochastic") -> float:
    """Mean episode return of the deployed policy, without learning."""
    total = 0.0
    for _ in range(episodes):
        state = env.reset(rng)
        ep = 0.0
        while not env.needs_reset:
            if env.kind == "discrete":
                if mode == "mean":
                    action = int(agent.head_probs(0)[int(state)].argmax())
                else:
                    action = agent.act(state, rng)
            else:
                action = agent.act_mean(state) if mode == "mean" else agent.act(state, rng)
            tr = env.step(action, rng)
            ep += tr.reward
            state = tr.next_state
        total += ep
    return total / episodes


def train(config: RunConfig, out_dir: str | None = None, progress=print,
          init_from: str | None = None) -> TrainResult:
    """Run the full training loop; returns (and optionally writes) the artifact.

    `init_from` points at a snapshot.json from a compatible earlier run;
    its parameters (and ensemble, if present) seed the new agent.
    """
    config.validate()
    streams = StreamBundle(config.seed)
    env = make_env(config)
    agent = _build_agent(env, config, streams.get("policy-init"))
    if init_from is not None:
        import json

        with open(init_from, "r", encoding="utf-8") as fh:
            agent.load_snapshot(json.load(fh))

    from .buffer import TransitionBuffer

    buffer = TransitionBuffer(config.buffer_capacity)
    rows: list[MetricsRow] = []
    stats = _IntervalStats()
    interval_transitions: list = []
    episode_return = 0.0
    state = env.reset(streams.get("env"))
    started = time.perf_counter()

    def flush_artifact():
        if out_dir is not None:
            resolved = dict(config.to_json())
            resolved["out_dir"] = str(out_dir)
            save_artifact(out_dir, resolved, rows, agent.snapshot())

    try:
        for step in range(1, config.steps + 1):
            if env.needs_reset:
                stats.episode_returns.append(episode_return)
                episode_return = 0.0
                state = env.reset(streams.get("env"))

            action = agent.act(state, streams.get("noise"))
            transition = env.step(action, streams.get("env"))
            buffer.add(transition)
            interval_transitions.append(transition)
            episode_return += transition.reward
            state = transition.next_state

            if step % config.env_steps_per_model_training == 0 \
                    and len(buffer) >= config.batch_size:
                agent.train_model(buffer, seed=int(streams.get("ensemble").integers(2**63)))

            if agent.model_ready and len(buffer) >= config.batch_size \
                    and step % config.update_every == 0:
                for _ in range(config.policy_updates_per_env_step):
                    batch = buffer.sample_batch(config.batch_size, streams.get("batch-sampling"))
                    if env.kind == "discrete":
                        critic_loss = agent.critic_update(batch)
                        report = agent.improve(batch["states"])
                    else:
                        q_loss, v_loss = agent.critic_update(batch, streams.get("noise"))
                        critic_loss = q_loss + v_loss
                        report = agent.improve(batch["states"], streams.get("noise"))
                    stats.critic_losses.append(critic_loss)
                    stats.objectives.append(report.objective_mean)
                    stats.horizons.append(report.mean_achieved_horizon)

            if step % config.env_steps_per_model_training == 0:
                stats.model_errors.extend(
                    _interval_model_errors(env, agent, interval_transitions))
                interval_transitions = []
                row = stats.row(step)
                rows.append(row)
                stats = _IntervalStats()
                if progress is not None and not config.quiet:
                    elapsed_ms = (time.perf_counter() - started) * 1e3
                    progress(f"{row.to_csv_line()}  [{elapsed_ms:.0f} ms elapsed]")
    except BaseException:
        flush_artifact()  # always leave a readable partial artifact behind
        raise

    eval_rng = streams.get("eval")
    final_stochastic = evaluate_policy(env, agent, eval_rng, mode="stochastic") \
        if config.steps > 0 else 0.0
    final_mean = evaluate_policy(env, agent, eval_rng, mode="mean") \
        if config.steps > 0 else 0.0
    result = TrainResult(config=config, rows=rows, snapshot=agent.snapshot(),
                         final_return_stochastic=final_stochastic,
                         final_return_mean_action=final_mean,
                         out_dir=str(out_dir) if out_dir is not None else None)
    flush_artifact()
    return result
