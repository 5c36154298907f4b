"""Maximum-entropy RL with multi-step planning distilled into the policy.

Two tiers share one package: an exact tabular tier (soft policy
evaluation, H-step planning by backward soft induction, distillation, and
extended policy iteration, all checkable in closed form) and a
function-approximation tier (ensemble dynamics models with One-vs-Rest
disagreement, adaptive-horizon gradient planning, SAC-style critics)
driven by the `plandistill` command-line harness.
"""

from .agent import RolloutRecord, regularized_reward
from .agent_continuous import ContinuousAgent, NoiseBundle
from .agent_discrete import DiscreteAgent
from .buffer import TransitionBuffer
from .config import RunConfig, resolve_config
from .ensemble import (
    CategoricalEnsemble,
    GaussianEnsemble,
    UncertaintyEstimate,
    ovr_uncertainty,
    predict_next,
    train_categorical,
    train_gaussian,
)
from .errors import ConvergenceError, TrainingDivergedError
from .mdp import TabularMDP, Transition, make_chain, make_gridworld, mc_soft_return, random_mdp
from .pendulum import PendulumEnv, PendulumParams
from .tabular import (
    HorizonPolicy,
    PlanningResult,
    SoftValueTable,
    TabularPolicy,
    distill_improve,
    extended_policy_iteration,
    horizon_bound_report,
    multi_step_objective,
    one_step_improvement,
    soft_policy_evaluation,
    soft_value_iteration,
    solve_multi_step,
)
from .training import TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "CategoricalEnsemble", "ContinuousAgent", "ConvergenceError", "DiscreteAgent",
    "GaussianEnsemble", "HorizonPolicy", "NoiseBundle", "PendulumEnv", "PendulumParams",
    "PlanningResult", "RolloutRecord", "RunConfig", "SoftValueTable", "TabularMDP",
    "TabularPolicy", "TrainResult", "Transition", "TransitionBuffer",
    "TrainingDivergedError", "UncertaintyEstimate", "distill_improve",
    "extended_policy_iteration", "horizon_bound_report", "make_chain", "make_gridworld",
    "mc_soft_return", "multi_step_objective", "one_step_improvement", "ovr_uncertainty",
    "predict_next", "random_mdp", "regularized_reward", "resolve_config",
    "soft_policy_evaluation", "soft_value_iteration", "solve_multi_step", "train",
    "train_categorical", "train_gaussian",
]
