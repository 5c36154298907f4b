"""Pendulum swing-up: the desk-scale continuous control task.

State is (angle, angular velocity) with the angle measured from upright and
wrapped to [-pi, pi). A bounded torque in [-1, 1] is scaled by `max_torque`.
Reward is -(theta^2 + 0.1 * theta_dot^2 + 0.001 * a^2): zero exactly at the
upright rest point with zero action, negative everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import Transition

STATE_DIM = 2
ACTION_DIM = 1


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    dt: float = 0.05
    gravity: float = 10.0
    max_torque: float = 2.0
    max_speed: float = 8.0


def wrap_angle(theta):
    """Map any angle to [-pi, pi)."""
    return (theta + np.pi) % (2.0 * np.pi) - np.pi


def reward_terms(theta, theta_dot, action):
    """-(theta^2 + 0.1 theta_dot^2 + 0.001 a^2), written with plain operators.

    Works on floats, numpy arrays, and autodiff tensors alike; the planner
    reuses it to get reward gradients with respect to actions and states.
    """
    return -(theta * theta + 0.1 * (theta_dot * theta_dot) + 0.001 * (action * action))


def pendulum_step(state: np.ndarray, action: float, params: PendulumParams) -> np.ndarray:
    """One semi-implicit Euler step of the pendulum dynamics."""
    theta, theta_dot = float(state[0]), float(state[1])
    torque = float(np.clip(action, -1.0, 1.0)) * params.max_torque
    m, length, g = params.mass, params.length, params.gravity
    theta_acc = 3.0 * g / (2.0 * length) * np.sin(theta) + 3.0 / (m * length**2) * torque
    theta_dot = np.clip(theta_dot + theta_acc * params.dt, -params.max_speed, params.max_speed)
    theta = wrap_angle(theta + theta_dot * params.dt)
    return np.array([theta, theta_dot], dtype=np.float64)


class PendulumEnv:
    """Stateful wrapper around `pendulum_step` with a hard episode cap.

    Hitting the cap is a time-limit truncation, not a terminal state, so
    Transition.terminal stays False and value bootstrapping remains valid.
    """

    def __init__(self, params: PendulumParams = PendulumParams(), max_episode_steps: int = 200):
        self.params = params
        self.max_episode_steps = int(max_episode_steps)
        self.state = np.zeros(STATE_DIM)
        self.steps_taken = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])
        self.steps_taken = 0
        return self.state.copy()

    @property
    def needs_reset(self) -> bool:
        return self.steps_taken >= self.max_episode_steps

    def step(self, action) -> Transition:
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (ACTION_DIM,):
            raise ValueError(f"action must have shape ({ACTION_DIM},), got {action.shape}")
        if not np.isfinite(action).all():
            raise ValueError("action must be finite")
        a = float(np.clip(action[0], -1.0, 1.0))
        reward = float(reward_terms(self.state[0], self.state[1], a))
        next_state = pendulum_step(self.state, a, self.params)
        transition = Transition(state=self.state.copy(), action=np.array([a]),
                                reward=reward, next_state=next_state.copy(), terminal=False)
        self.state = next_state
        self.steps_taken += 1
        return transition
