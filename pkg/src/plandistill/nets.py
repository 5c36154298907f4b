"""Small function approximators and their optimizer.

An `Mlp` is a tanh network over the autodiff tape; `SquashedGaussianPolicy`
puts a tanh-squashed Gaussian head on top with an exact log-density
(including the change-of-variables correction). Noise is always passed in
explicitly: no differentiable path ever draws randomness internally, which
keeps replays deterministic and finite-difference checks exact.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .autodiff import Tensor, concat

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


class Mlp:
    """Fully connected tanh network, identity output layer."""

    def __init__(self, layer_sizes: Sequence[int], rng: np.random.Generator):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
            self.biases.append(Tensor(rng.uniform(-bound, bound, size=(1, fan_out))))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def param_count(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.layer_sizes, self.layer_sizes[1:]))

    def forward(self, x: Tensor) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.atleast_2d(x))
        if x.data.ndim != 2 or x.data.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"input must be [batch, {self.layer_sizes[0]}], got {x.data.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = h.tanh()
        return h

    __call__ = forward

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass for evaluation-only paths."""
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                h = np.tanh(h)
        return h

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count:
            raise ValueError(f"expected {self.param_count} parameters, got {flat.size}")
        offset = 0
        for p in self.params:
            n = p.data.size
            p.data = flat[offset:offset + n].reshape(p.data.shape).copy()
            offset += n


def gaussian_log_density(pre: Tensor, mean: Tensor, log_std: Tensor) -> Tensor:
    """Sum over dimensions of log N(pre; mean, exp(log_std)^2)."""
    z = (pre - mean) * (-log_std).exp()
    return (z * z * -0.5 - log_std - 0.5 * LOG_2PI).sum(axis=1, keepdims=True)


class SquashedGaussianPolicy:
    """Gaussian policy squashed through tanh and scaled to the action bound.

    sample: a = bound * tanh(mean + std * noise). The log-density subtracts
    sum log(bound * (1 - tanh^2(pre))), with log(1 - tanh^2(x)) evaluated as
    2 (log 2 - x - softplus(-2x)) so large |pre| cannot overflow.
    """

    def __init__(self, state_dim: int, action_dim: int, hidden: Sequence[int],
                 rng: np.random.Generator, action_bound: float = 1.0):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.action_bound = float(action_bound)
        self.net = Mlp([state_dim, *hidden, 2 * action_dim], rng)

    @property
    def params(self) -> list[Tensor]:
        return self.net.params

    def _head(self, state: Tensor):
        out = self.net(state)
        mean = out[:, :self.action_dim]
        log_std = out[:, self.action_dim:].clip(LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def sample(self, state: Tensor, noise: np.ndarray):
        """Reparameterized draw: returns (action, log_prob), both on the tape.

        `noise` must be standard-normal of shape [batch, action_dim]; passing
        it in (rather than drawing here) makes replays deterministic. Under
        reparameterization the standardized residual (pre - mean)/std equals
        `noise` identically, so the Gaussian base density is evaluated with
        the constant noise; this yields the same values and the same
        gradients as the explicit form (checked against gaussian_log_density
        and finite differences in the tests) with a shorter tape.
        """
        if not isinstance(state, Tensor):
            state = Tensor(np.atleast_2d(state))
        noise = np.asarray(noise, dtype=np.float64)
        mean, log_std = self._head(state)
        pre = mean + log_std.exp() * noise
        action = pre.tanh() * self.action_bound
        base = -log_std + (-0.5 * noise * noise - 0.5 * LOG_2PI)
        # change of variables: da/dpre = bound * (1 - tanh^2(pre))
        log_det = (math.log(2.0) - pre - (pre * -2.0).softplus()) * 2.0 \
            + math.log(self.action_bound)
        log_prob = (base - log_det).sum(axis=1, keepdims=True)
        return action, log_prob

    def sample_np(self, state: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Tape-free reparameterized draw for environment interaction."""
        out = self.net.forward_np(state)
        mean = out[:, :self.action_dim]
        log_std = np.clip(out[:, self.action_dim:], LOG_STD_MIN, LOG_STD_MAX)
        return self.action_bound * np.tanh(mean + np.exp(log_std) * noise)

    def mean_action(self, state: np.ndarray) -> np.ndarray:
        """Deterministic exploitation action (tanh of the mean), tape-free."""
        out = self.net.forward_np(state)
        return self.action_bound * np.tanh(out[:, :self.action_dim])

    def log_density_np(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        """log pi(action | state) for given actions, tape-free.

        Inverts the squashing (actions strictly inside the bound) and applies
        the same change-of-variables correction as `sample`.
        """
        state = np.atleast_2d(state)
        action = np.atleast_2d(action)
        out = self.net.forward_np(state)
        mean = out[:, :self.action_dim]
        log_std = np.clip(out[:, self.action_dim:], LOG_STD_MIN, LOG_STD_MAX)
        ratio = np.clip(action / self.action_bound, -1 + 1e-12, 1 - 1e-12)
        pre = np.arctanh(ratio)
        z = (pre - mean) * np.exp(-log_std)
        base = (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=1)
        log_det = (2.0 * (math.log(2.0) - pre - np.logaddexp(0.0, -2.0 * pre))
                   + math.log(self.action_bound)).sum(axis=1)
        return base - log_det


class Adam:
    """Adaptive moment optimizer over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter tensor required")
        for g in grads:
            if not np.isfinite(g).all():
                raise FloatingPointError("non-finite gradient in optimizer step")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
