"""Run configuration: hyperparameters, per-environment profiles, precedence.

Resolution order is defaults < config file < command-line flags. Defaults
are environment-dependent: the global table follows the reference
hyperparameters (ensemble of 7, batch 256, 20 updates per step, horizon 25
and so on), while the desk-scale environments shipped here override a few
of them so a full training run finishes in minutes on one core. Whatever
wins resolution is serialized verbatim into the run artifact.

Config files are JSON restricted to exactly these field names in
snake_case; unknown keys are a hard error, which catches typos before they
silently change an experiment.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

ENV_CHOICES = ("chain", "gridworld", "pendulum")


@dataclass
class RunConfig:
    """Fully resolved settings for one command invocation."""

    # core hyperparameters
    ensemble_size: int = 7
    buffer_capacity: int = 1_000_000
    batch_size: int = 256
    learning_rate: float = 3e-4
    threshold: float = -5.0  # u_T; rollouts stop once log u(s, a) >= threshold
    alpha: float = 0.2
    beta: float = 0.5
    reward_scale: float = 1.0  # SAC-style reward scaling inside critics and planner
    max_horizon: int = 25
    policy_updates_per_env_step: int = 20
    update_every: int = 1  # env steps between update rounds (desk-scale ratios < 1)
    env_steps_per_model_training: int = 250
    gamma: float = 0.99
    seed: int = 0

    # artifact plumbing: network sizes, model-fit schedule, critic details
    hidden_size: int = 32
    model_hidden_size: int = 32
    model_epochs: int = 6
    model_lr: float = 2e-3
    model_batch_size: int = 256
    model_window: int = 6000  # most recent transitions used per model refit
    model_logvar_min: float = -10.0  # predictive log-variance clamp floor
    smoothing: float = 1e-3  # categorical ensemble pseudo-count
    critic_step: float = 0.2  # tabular critic step size
    tau: float = 0.01  # target-value tracking coefficient
    twin_q: bool = True
    grad_clip: float = 10.0  # sup-norm clip on policy gradients
    episode_max_steps: int = 200

    # run shape
    env: str = "chain"
    steps: int = 10_000
    out_dir: str = "runs/latest"
    quiet: bool = False

    def validate(self) -> "RunConfig":
        if self.env not in ENV_CHOICES:
            raise ValueError(f"env must be one of {ENV_CHOICES}, got {self.env!r}")
        positive = ("ensemble_size", "buffer_capacity", "batch_size", "learning_rate",
                    "alpha", "max_horizon", "policy_updates_per_env_step", "update_every",
                    "env_steps_per_model_training", "hidden_size", "model_hidden_size",
                    "model_epochs", "model_lr", "model_batch_size", "model_window",
                    "smoothing", "critic_step", "tau", "episode_max_steps")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie strictly in (0, 1), got {self.gamma}")
        if self.beta < 0 or self.grad_clip <= 0 or self.steps < 0:
            raise ValueError("beta must be >= 0, grad_clip > 0, steps >= 0")
        if self.reward_scale <= 0:
            raise ValueError(f"reward_scale must be positive, got {self.reward_scale}")
        if self.model_logvar_min >= 2.0:
            raise ValueError("model_logvar_min must sit below the +2 clamp ceiling")
        return self

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


FIELD_NAMES = tuple(f.name for f in dataclasses.fields(RunConfig))
HYPERPARAM_FIELDS = tuple(n for n in FIELD_NAMES if n not in ("env", "steps", "out_dir", "quiet"))

# Desk-scale overrides per environment. The reference table targets MuJoCo
# budgets; these keep a whole run in the minutes range without changing the
# algorithm. Anything here still loses to config files and flags.
ENV_PROFILES: dict[str, dict] = {
    "chain": dict(
        ensemble_size=5, buffer_capacity=50_000, batch_size=32, learning_rate=0.05,
        max_horizon=6, policy_updates_per_env_step=2, gamma=0.95,
        episode_max_steps=50, model_window=50_000,
    ),
    "gridworld": dict(
        ensemble_size=5, buffer_capacity=50_000, batch_size=32, learning_rate=0.05,
        max_horizon=8, policy_updates_per_env_step=2, gamma=0.95,
        episode_max_steps=50, model_window=50_000,
    ),
    "pendulum": dict(
        ensemble_size=5, buffer_capacity=100_000, batch_size=64, learning_rate=3e-4,
        max_horizon=6, policy_updates_per_env_step=1, update_every=1, gamma=0.98,
        episode_max_steps=200, threshold=0.0, reward_scale=0.1,
        model_epochs=6, model_lr=2.5e-3, model_batch_size=512,
        model_window=100_000, model_logvar_min=-5.0,
        env_steps_per_model_training=500,
    ),
}


def _coerce(name: str, value):
    field_types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    target = field_types[name]
    if target in ("int", int):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ValueError(f"{name} must be an integer, got {value!r}")
        return int(value)
    if target in ("float", float):
        return float(value)
    if target in ("bool", bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ValueError(f"{name} must be a boolean, got {value!r}")
    return value


def load_config_file(path: str | Path) -> dict:
    """Read a JSON config; unknown keys are a hard error."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must contain a JSON object")
    unknown = sorted(set(raw) - set(FIELD_NAMES))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in raw.items()}


def resolve_config(flag_overrides: dict | None = None,
                   config_path: str | Path | None = None) -> RunConfig:
    """Layer defaults, the env profile, the config file, then flags."""
    flags = {k: v for k, v in (flag_overrides or {}).items() if v is not None}
    unknown = sorted(set(flags) - set(FIELD_NAMES))
    if unknown:
        raise ValueError(f"unknown config fields: {', '.join(unknown)}")
    file_values = load_config_file(config_path) if config_path else {}

    env = flags.get("env", file_values.get("env", RunConfig().env))
    merged: dict = dict(ENV_PROFILES.get(env, {}))
    merged["env"] = env
    merged.update(file_values)
    merged.update({k: _coerce(k, v) for k, v in flags.items()})
    return RunConfig(**merged).validate()
