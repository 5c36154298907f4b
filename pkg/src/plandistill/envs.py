"""Adapters giving the trainer one interface over tabular and continuous tasks."""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .mdp import TabularMDP, Transition, make_chain, make_gridworld
from .pendulum import PendulumEnv, PendulumParams


class TabularEnvAdapter:
    """Episodic interaction with a known tabular MDP.

    Episodes are fixed-length segments with resets to the start state; the
    underlying MDP is a continuing task, so truncation is a time limit, not
    a terminal state. The true MDP stays accessible for oracle evaluation
    and model-error diagnostics (never for the agent's own updates).
    """

    kind = "discrete"

    def __init__(self, mdp: TabularMDP, start_state: int = 0, episode_max_steps: int = 50):
        self.mdp = mdp
        self.start_state = int(start_state)
        self.episode_max_steps = int(episode_max_steps)
        self.state = self.start_state
        self.steps_taken = 0

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    def reset(self, rng: np.random.Generator) -> int:
        self.state = self.start_state
        self.steps_taken = 0
        return self.state

    @property
    def needs_reset(self) -> bool:
        return self.steps_taken >= self.episode_max_steps

    def step(self, action: int, rng: np.random.Generator) -> Transition:
        action = int(action)
        next_state = self.mdp.sample_next(self.state, action, rng)
        transition = Transition(
            state=self.state, action=action, reward=float(self.mdp.reward[self.state, action]),
            next_state=next_state, terminal=bool(self.mdp.terminal_mask[next_state]))
        self.state = next_state
        self.steps_taken += 1
        return transition


class PendulumAdapter:
    """Continuous control task behind the same reset/step surface."""

    kind = "continuous"
    state_dim = 2
    action_dim = 1

    def __init__(self, episode_max_steps: int = 200, params: PendulumParams = PendulumParams()):
        self.env = PendulumEnv(params, max_episode_steps=episode_max_steps)

    @staticmethod
    def model_target(states: np.ndarray, next_states: np.ndarray) -> np.ndarray:
        """Jump-free regression targets: angle continued past the wrap.

        A transition crossing the +-pi seam otherwise looks like a 2 pi
        jump, which poisons the dynamics fit; the physical increment is the
        learnable quantity.
        """
        from .pendulum import wrap_angle

        states = np.atleast_2d(states)
        next_states = np.atleast_2d(next_states)
        theta = states[:, 0] + wrap_angle(next_states[:, 0] - states[:, 0])
        return np.column_stack([theta, next_states[:, 1]])

    @property
    def state(self) -> np.ndarray:
        return self.env.state

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return self.env.reset(rng)

    @property
    def needs_reset(self) -> bool:
        return self.env.needs_reset

    def step(self, action, rng: np.random.Generator) -> Transition:
        return self.env.step(action)


def make_env(config: RunConfig):
    if config.env == "chain":
        return TabularEnvAdapter(make_chain(gamma=config.gamma),
                                 episode_max_steps=config.episode_max_steps)
    if config.env == "gridworld":
        return TabularEnvAdapter(make_gridworld(gamma=config.gamma),
                                 episode_max_steps=config.episode_max_steps)
    if config.env == "pendulum":
        return PendulumAdapter(episode_max_steps=config.episode_max_steps)
    raise ValueError(f"unknown env {config.env!r}")
