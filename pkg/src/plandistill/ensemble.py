"""Ensemble dynamics models with One-vs-Rest disagreement.

Two variants share the same uncertainty interface: a count-based
categorical ensemble for tabular environments and a Gaussian-head network
ensemble for continuous ones. Member diversity comes from independent
bootstrap resamples of the replay buffer plus (for networks) independent
initialization; the disagreement score is

    u(s, a) = sum_i KL(p_i(.|s,a) || p_rest_i(.|s,a)),

where p_rest_i aggregates the other K-1 members: their arithmetic mean for
categorical rows, their moment-matched Gaussian (mean of means, variance =
mean of variances plus mean squared deviation) for Gaussian heads. KL to a
Gaussian mixture has no closed form, which is why the rest-aggregate is
moment-matched; the test suite quantifies that choice against quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .buffer import TransitionBuffer
from .errors import TrainingDivergedError
from .nets import Adam, Mlp

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 2.0


@dataclass(frozen=True)
class UncertaintyEstimate:
    """Total OvR disagreement and its per-member decomposition."""

    value: float
    per_model_kl: np.ndarray

    def __post_init__(self):
        kl = np.maximum(np.asarray(self.per_model_kl, dtype=np.float64), 0.0)
        kl.setflags(write=False)
        object.__setattr__(self, "per_model_kl", kl)
        object.__setattr__(self, "value", float(max(self.value, 0.0)))
        if abs(self.value - self.per_model_kl.sum()) > 1e-9:
            raise ValueError("total uncertainty must equal the sum of per-member KLs")


# --- categorical (tabular) variant -------------------------------------------


class CategoricalEnsemble:
    """K count tables over (s, a) -> s' with Dirichlet smoothing."""

    def __init__(self, counts: np.ndarray, smoothing: float):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.ndim != 4:
            raise ValueError("counts must have shape [K, S, A, S]")
        if smoothing <= 0:
            raise ValueError(f"smoothing must be positive, got {smoothing}")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        self.counts = counts
        self.smoothing = float(smoothing)
        self._probs_cache = None

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def n_states(self) -> int:
        return self.counts.shape[1]

    @property
    def n_actions(self) -> int:
        return self.counts.shape[2]

    def member_probs(self) -> np.ndarray:
        """Smoothed predictive rows, shape [K, S, A, S]; rows sum to one."""
        if self._probs_cache is None:
            smoothed = self.counts + self.smoothing
            self._probs_cache = smoothed / smoothed.sum(axis=3, keepdims=True)
        return self._probs_cache

    def mixture_probs(self) -> np.ndarray:
        """Uniform-mixture prediction over members, shape [S, A, S]."""
        return self.member_probs().mean(axis=0)

    def uncertainty_table(self) -> np.ndarray:
        """u(s, a) for every state-action pair at once, shape [S, A]."""
        probs = self.member_probs()
        total = np.zeros(probs.shape[1:3])
        for i in range(self.k):
            rest = (probs.sum(axis=0) - probs[i]) / (self.k - 1)
            total += (probs[i] * (np.log(probs[i]) - np.log(rest))).sum(axis=2)
        return np.maximum(total, 0.0)


def train_categorical(buffer: TransitionBuffer, k: int, smoothing: float,
                      seed: int, n_states: int, n_actions: int) -> CategoricalEnsemble:
    """Fit K categorical models, each on its own bootstrap resample.

    Counting resample frequencies is exactly maximum likelihood for a
    categorical row; the smoothing pseudo-count keeps unvisited rows
    uniform and every probability strictly positive.
    """
    if len(buffer) == 0:
        raise ValueError("buffer must be nonempty")
    if k < 2:
        raise ValueError(f"need at least 2 ensemble members, got {k}")
    rng = np.random.default_rng(seed)
    data = buffer.all()
    states = data["states"].astype(np.int64)
    actions = data["actions"].astype(np.int64)
    next_states = data["next_states"].astype(np.int64)
    counts = np.zeros((k, n_states, n_actions, n_states))
    for i in range(k):
        idx = buffer.bootstrap_indices(rng)
        np.add.at(counts[i], (states[idx], actions[idx], next_states[idx]), 1.0)
    return CategoricalEnsemble(counts, smoothing)


# --- Gaussian (continuous) variant --------------------------------------------


def gaussian_head_stats(net: Mlp, state: Tensor, action: Tensor, state_dim: int,
                        logvar_min: float = LOG_VAR_MIN, logvar_max: float = LOG_VAR_MAX):
    """(mean, variance) of one Gaussian head at a batch of (s, a), on the tape.

    The raw network output is a residual on the current state plus a
    clamped log-variance; returning (state + delta, exp(log_var)) keeps the
    contract "mean of the next-state distribution" at the interface.
    """
    from .autodiff import concat

    out = net(concat([state, action], axis=1))
    mean = state + out[:, :state_dim]
    log_var = out[:, state_dim:].clip(logvar_min, logvar_max)
    return mean, log_var.exp()


class GaussianEnsemble:
    """K tanh networks emitting a diagonal Gaussian over the next state.

    Each member maps (state, action) to (mean, log-variance); the mean is
    parameterized as a residual on the current state, which is the natural
    scale for smooth dynamics. Log-variances are clamped to keep KL terms
    and likelihoods bounded; the clamp floor doubles as the resolution at
    which member disagreement is judged, so nearly-deterministic tasks can
    raise it to keep the One-vs-Rest score commensurable across training.
    """

    def __init__(self, members: list[Mlp], state_dim: int, action_dim: int,
                 logvar_min: float = LOG_VAR_MIN, logvar_max: float = LOG_VAR_MAX):
        if len(members) < 2:
            raise ValueError("need at least 2 ensemble members")
        if not logvar_min < logvar_max:
            raise ValueError("need logvar_min < logvar_max")
        self.members = members
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.logvar_min = float(logvar_min)
        self.logvar_max = float(logvar_max)

    @property
    def k(self) -> int:
        return len(self.members)

    def member_stats_t(self, i: int, state: Tensor, action: Tensor):
        """(mean, variance) tensors of member i at a batch of (s, a)."""
        return gaussian_head_stats(self.members[i], state, action, self.state_dim,
                                   self.logvar_min, self.logvar_max)

    def member_stats_np(self, i: int, state: np.ndarray, action: np.ndarray):
        state = np.atleast_2d(state)
        action = np.atleast_2d(action)
        out = self.members[i].forward_np(np.concatenate([state, action], axis=1))
        mean = state + out[:, :self.state_dim]
        log_var = np.clip(out[:, self.state_dim:], self.logvar_min, self.logvar_max)
        return mean, np.exp(log_var)

    def member_sample_t(self, i: int, state: Tensor, action: Tensor,
                        noise: np.ndarray) -> Tensor:
        """Reparameterized next-state draw mean + std * noise, on the tape.

        The deterministic-transform form is what lets planning gradients
        flow through predicted states back into earlier actions.
        """
        mean, var = self.member_stats_t(i, state, action)
        return mean + var**0.5 * np.asarray(noise, dtype=np.float64)

    def all_stats_np(self, state: np.ndarray, action: np.ndarray):
        """Stacked member means and variances, shapes [K, B, D]."""
        stats = [self.member_stats_np(i, state, action) for i in range(self.k)]
        return np.stack([m for m, _ in stats]), np.stack([v for _, v in stats])

    def mean_prediction_np(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        means, _ = self.all_stats_np(state, action)
        return means.mean(axis=0)


def gaussian_nll(mean: Tensor, variance: Tensor, target: np.ndarray) -> Tensor:
    """Mean over the batch of the Gaussian negative log-likelihood."""
    diff = mean - target
    return ((diff * diff) / variance + variance.log()).sum(axis=1, keepdims=True).mean() * 0.5


def train_gaussian(buffer: TransitionBuffer, k: int, epochs: int, lr: float, seed: int,
                   hidden=(32, 32), batch_size: int = 64,
                   max_points: int | None = None,
                   logvar_init: float = -4.0,
                   logvar_min: float = LOG_VAR_MIN, logvar_max: float = LOG_VAR_MAX,
                   target_transform=None) -> GaussianEnsemble:
    """Fit K Gaussian-head networks by maximum likelihood.

    Each member gets an independent initialization and an independent
    bootstrap resample; minibatch order is reshuffled per epoch. The
    log-variance head starts at `logvar_init` (sharp rather than
    overdispersed, so fresh ensembles register their genuine disagreement
    instead of hiding it under inflated variances). `target_transform`,
    when given, maps (states, next_states) to the regression targets; an
    environment with a periodic coordinate uses it to hand the model
    jump-free targets. Divergence (a non-finite loss) raises
    TrainingDivergedError carrying the last finite parameter snapshot.
    """
    if len(buffer) == 0:
        raise ValueError("buffer must be nonempty")
    if k < 2:
        raise ValueError(f"need at least 2 ensemble members, got {k}")
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    rng = np.random.default_rng(seed)
    data = buffer.all() if max_points is None else buffer.recent(max_points)
    states = np.asarray(data["states"], dtype=np.float64)
    actions = np.asarray(data["actions"], dtype=np.float64)
    targets = np.asarray(data["next_states"], dtype=np.float64)
    if target_transform is not None:
        targets = np.asarray(target_transform(states, targets), dtype=np.float64)
    if states.ndim != 2 or actions.ndim != 2:
        raise ValueError("Gaussian ensembles need vector states and actions")
    state_dim = states.shape[1]
    action_dim = actions.shape[1]
    n = states.shape[0]

    members = []
    for i in range(k):
        member_rng = np.random.default_rng(rng.integers(0, 2**63))
        net = Mlp([state_dim + action_dim, *hidden, 2 * state_dim], member_rng)
        net.biases[-1].data[0, state_dim:] = logvar_init
        boot = member_rng.integers(0, n, size=n)
        xs, acts, ys = states[boot], actions[boot], targets[boot]
        opt = Adam(net.params, lr=lr)
        last_good = net.get_flat()
        for _ in range(max(epochs, 1)):
            order = member_rng.permutation(n)
            for start in range(0, n, batch_size):
                sel = order[start:start + batch_size]
                mean, var = gaussian_head_stats(net, Tensor(xs[sel]), Tensor(acts[sel]),
                                                state_dim, logvar_min, logvar_max)
                loss = gaussian_nll(mean, var, ys[sel])
                if not np.isfinite(loss.data).all():
                    raise TrainingDivergedError(
                        f"member {i} diverged during likelihood training",
                        snapshot=last_good)
                loss.backward()
                opt.step([p.grad for p in net.params])
                last_good = net.get_flat()
        members.append(net)
    return GaussianEnsemble(members, state_dim, action_dim, logvar_min, logvar_max)


# --- One-vs-Rest uncertainty ----------------------------------------------------


def gaussian_ovr(means: list, variances: list):
    """Total OvR disagreement for K diagonal Gaussians, plus per-member terms.

    Written against generic arithmetic so it runs identically on numpy
    arrays and autodiff tensors (the planner needs u on the tape). The
    rest-of-ensemble aggregate is the moment-matched Gaussian of the other
    K-1 members; each KL is the closed diagonal-Gaussian form.
    """
    k = len(means)
    if k < 2:
        raise ValueError("OvR needs at least 2 members")
    mean_sum = means[0]
    sq_sum = means[0] * means[0]
    var_sum = variances[0]
    for mu, var in zip(means[1:], variances[1:]):
        mean_sum = mean_sum + mu
        sq_sum = sq_sum + mu * mu
        var_sum = var_sum + var
    per_member = []
    for mu, var in zip(means, variances):
        rest_mean = (mean_sum - mu) * (1.0 / (k - 1))
        rest_var = ((var_sum - var) + (sq_sum - mu * mu)) * (1.0 / (k - 1)) \
            - rest_mean * rest_mean
        ratio = var / rest_var
        dev = mu - rest_mean
        kl_dims = ((rest_var / var).log() + ratio + (dev * dev) / rest_var - 1.0) * 0.5
        per_member.append(kl_dims.sum(axis=-1, keepdims=True))
    total = per_member[0]
    for term in per_member[1:]:
        total = total + term
    return total, per_member


def categorical_ovr_rows(rows: np.ndarray):
    """OvR for K categorical rows [K, N]; returns (total, per-member array)."""
    k = rows.shape[0]
    if k < 2:
        raise ValueError("OvR needs at least 2 members")
    per_member = np.zeros(k)
    total_row = rows.sum(axis=0)
    for i in range(k):
        rest = (total_row - rows[i]) / (k - 1)
        per_member[i] = float((rows[i] * (np.log(rows[i]) - np.log(rest))).sum())
    return float(per_member.sum()), per_member


def ovr_uncertainty(ensemble, state, action) -> UncertaintyEstimate:
    """One-vs-Rest model-error estimate u(s, a) for either ensemble variant."""
    if isinstance(ensemble, CategoricalEnsemble):
        rows = ensemble.member_probs()[:, int(state), int(action), :]
        total, per_member = categorical_ovr_rows(rows)
        return UncertaintyEstimate(total, per_member)
    if isinstance(ensemble, GaussianEnsemble):
        state = np.atleast_2d(state)
        action = np.atleast_2d(action)
        means, variances = [], []
        for i in range(ensemble.k):
            mu, var = ensemble.member_stats_np(i, state, action)
            means.append(Tensor(mu))
            variances.append(Tensor(var))
        total, per_member = gaussian_ovr(means, variances)
        return UncertaintyEstimate(float(total.data[0, 0]),
                                   np.array([p.data[0, 0] for p in per_member]))
    raise TypeError(f"unsupported ensemble type {type(ensemble)!r}")


def predict_next(ensemble, state, action, rng: np.random.Generator):
    """Sample a next state: pick a member uniformly, then sample its prediction."""
    if isinstance(ensemble, CategoricalEnsemble):
        member = int(rng.integers(ensemble.k))
        row = ensemble.member_probs()[member, int(state), int(action)]
        return int(rng.choice(ensemble.n_states, p=row))
    if isinstance(ensemble, GaussianEnsemble):
        member = int(rng.integers(ensemble.k))
        mean, var = ensemble.member_stats_np(member, state, action)
        noise = rng.standard_normal(mean.shape)
        return mean + np.sqrt(var) * noise
    raise TypeError(f"unsupported ensemble type {type(ensemble)!r}")
