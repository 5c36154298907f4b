"""Pieces shared by the discrete and continuous planning agents.

The planning rollout's per-step payoff is the regularized reward
r - alpha * log pi - beta * u: the maximum-entropy reward with the
ensemble-disagreement penalty subtracted, which steers planning away from
regions the learned model cannot be trusted in. A rollout stops early when
log u(s, a) crosses the threshold (the threshold lives in log domain: raw
OvR values are nonnegative KL sums, so a negative threshold like the
default -5 means "stop once u exceeds e^-5").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_U_FLOOR = 1e-300  # keeps log u finite when members agree exactly


def regularized_reward(r, logpi, u, alpha: float, beta: float):
    """r - alpha * logpi - beta * u; works on floats, arrays, and tensors."""
    return r - alpha * logpi - beta * u


def threshold_exceeded(u_values, threshold: float):
    """Log-domain stop test: True where log u >= threshold."""
    u = np.maximum(np.asarray(u_values, dtype=np.float64), LOG_U_FLOOR)
    return np.log(u) >= threshold


@dataclass
class RolloutRecord:
    """What happened to one planning rollout from one start state."""

    start_state: object
    achieved_horizon: int
    objective: float
    stop_reason: str  # "threshold" | "terminal" | "max_horizon"
    steps: list = field(default_factory=list)  # (action, reward, log_pi, u) per step

    def __post_init__(self):
        if self.achieved_horizon < 0:
            raise ValueError("achieved horizon cannot be negative")
        if not np.isfinite(self.objective):
            raise ValueError("rollout objective must be finite")
        if self.stop_reason not in ("threshold", "terminal", "max_horizon"):
            raise ValueError(f"unknown stop reason {self.stop_reason!r}")


@dataclass
class ImprovementReport:
    """Diagnostics from one farsighted improvement step.

    `head_grads` holds the raw batch-mean gradient per policy head (before
    clipping), keyed by head index; heads a batch never reached are absent
    or exactly zero. `clip_scale` < 1 means the sup-norm clip engaged.
    """

    objective_mean: float
    mean_achieved_horizon: float
    head_grads: dict
    clip_scale: float = 1.0
    rollouts: list = field(default_factory=list)


def supnorm_clip_scale(grads: list, limit: float) -> float:
    """Scale factor bringing the concatenated gradient's sup norm under `limit`."""
    worst = max((float(np.abs(g).max()) for g in grads if g.size), default=0.0)
    if worst <= limit or worst == 0.0:
        return 1.0
    return limit / worst
