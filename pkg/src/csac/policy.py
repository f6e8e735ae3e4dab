"""Squashed-Gaussian stochastic policy with exact log-densities and frozen snapshots.

The network is a single Mlp whose output stacks the mean head and the raw
log-std head: out[..., :A] is the mean, out[..., A:] the pre-clamp log-std.
That is arithmetically identical to a shared trunk with two linear heads and
keeps the backward pass a single tape.
"""

from __future__ import annotations

import numpy as np

from . import diffcore
from .diffcore import Mlp, NumericError

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SNAPSHOT_LOG_PROB_FLOOR = -100.0

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
# keeps tanh output strictly inside (-1, 1) when the float rounds to +-1
_SQUASH_MARGIN = 1e-12


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _tanh_log_jacobian(u):
    """log(1 - tanh(u)^2) in the form 2*(log 2 - u - softplus(-2u)); stable for large |u|."""
    return 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u))


def _atanh(y):
    return 0.5 * (np.log1p(y) - np.log1p(-y))


class SquashedGaussianPolicy:
    """tanh-squashed Gaussian over a box [action_low, action_high]."""

    def __init__(self, net: Mlp, action_low, action_high,
                 log_std_min: float = LOG_STD_MIN, log_std_max: float = LOG_STD_MAX):
        action_low = np.asarray(action_low, dtype=np.float64)
        action_high = np.asarray(action_high, dtype=np.float64)
        if action_low.shape != action_high.shape or action_low.ndim != 1:
            raise ValueError("action bounds must be 1-D and congruent")
        if not np.all(action_low < action_high):
            raise ValueError("action_low must be strictly below action_high")
        if net.out_dim != 2 * action_low.size:
            raise ValueError(f"net out_dim {net.out_dim} != 2 * action_dim {action_low.size}")
        self.net = net
        self.action_low = action_low
        self.action_high = action_high
        self.action_dim = action_low.size
        self.obs_dim = net.in_dim
        self.scale = (action_high - action_low) / 2.0
        self.center = (action_high + action_low) / 2.0
        self.log_std_min = float(log_std_min)
        self.log_std_max = float(log_std_max)

    def heads(self, obs) -> tuple[np.ndarray, np.ndarray, np.ndarray, diffcore.GradientTape]:
        """Forward pass split into (mean, raw log-std, clamped log-std, tape)."""
        out, tape = diffcore.forward(self.net, obs)
        if not np.isfinite(out).all():
            raise NumericError("non-finite policy network output")
        mean = out[..., : self.action_dim]
        log_std_raw = out[..., self.action_dim:]
        log_std = np.clip(log_std_raw, self.log_std_min, self.log_std_max)
        return mean, log_std_raw, log_std, tape


def _log_density_given_heads(mean, log_std, pre_squash, scale):
    """Exact log-density of the squashed action with the given pre-squash value.

    Gaussian term evaluated from (pre_squash - mean) so that sample() and
    log_prob() agree bitwise on the same inputs.
    """
    xi = (pre_squash - mean) * np.exp(-log_std)
    gauss = -_HALF_LOG_2PI - log_std - 0.5 * np.square(xi)
    per_dim = gauss - _tanh_log_jacobian(pre_squash) - np.log(scale)
    return per_dim.sum(axis=-1)


def squash(policy: SquashedGaussianPolicy, pre_squash):
    """Map pre-squash values to actions strictly inside the bounds."""
    t = np.tanh(pre_squash)
    t = np.clip(t, -1.0 + _SQUASH_MARGIN, 1.0 - _SQUASH_MARGIN)
    return policy.center + policy.scale * t


def unsquash(policy: SquashedGaussianPolicy, action):
    """Inverse of squash (pre-squash recovery), clipped away from the bounds."""
    y = (np.asarray(action, dtype=np.float64) - policy.center) / policy.scale
    y = np.clip(y, -1.0 + _SQUASH_MARGIN, 1.0 - _SQUASH_MARGIN)
    return _atanh(y)


def sample(policy: SquashedGaussianPolicy, obs, noise):
    """Reparameterized draw: pre_squash = mean + std * noise, action = squash(pre_squash).

    Returns (action, pre_squash, log_prob). noise must be standard-normal
    shaped like the action (vector or batch).
    """
    noise = np.asarray(noise, dtype=np.float64)
    mean, _, log_std, _ = policy.heads(obs)
    if noise.shape != mean.shape:
        raise ValueError(f"noise shape {noise.shape}, expected {mean.shape}")
    pre_squash = mean + np.exp(log_std) * noise
    action = squash(policy, pre_squash)
    logp = _log_density_given_heads(mean, log_std, pre_squash, policy.scale)
    return action, pre_squash, logp


def log_prob(policy: SquashedGaussianPolicy, obs, pre_squash):
    """Log-density of squash(pre_squash) under the policy at obs."""
    pre_squash = np.asarray(pre_squash, dtype=np.float64)
    if not np.isfinite(pre_squash).all():
        raise NumericError("non-finite pre_squash")
    mean, _, log_std, _ = policy.heads(obs)
    return _log_density_given_heads(mean, log_std, pre_squash, policy.scale)


def log_prob_action(policy: SquashedGaussianPolicy, obs, action):
    """Log-density evaluated at an action in environment coordinates."""
    return log_prob(policy, obs, unsquash(policy, action))


def deterministic_action(policy: SquashedGaussianPolicy, obs):
    """Zero-noise evaluation action: squash(mean)."""
    mean, _, _, _ = policy.heads(obs)
    return squash(policy, mean)


class PolicySnapshot:
    """Deep frozen copy of a policy; log_prob on it is a pure function."""

    def __init__(self, policy: SquashedGaussianPolicy, taken_at_update: int = -1):
        net = policy.net.copy()
        for arr in (*net.weights, *net.biases):
            arr.setflags(write=False)
        self._policy = SquashedGaussianPolicy(
            net, policy.action_low.copy(), policy.action_high.copy(),
            policy.log_std_min, policy.log_std_max)
        self.taken_at_update = taken_at_update

    @property
    def net(self) -> Mlp:
        return self._policy.net

    def log_prob(self, obs, pre_squash):
        return log_prob(self._policy, obs, pre_squash)

    def log_prob_action(self, obs, action):
        return log_prob_action(self._policy, obs, action)

    def heads(self, obs):
        return self._policy.heads(obs)

    @property
    def scale(self):
        return self._policy.scale


def snapshot(policy: SquashedGaussianPolicy, taken_at_update: int = -1) -> PolicySnapshot:
    return PolicySnapshot(policy, taken_at_update)


def floor_snapshot_log_prob(logp):
    """Floor frozen-policy densities before they enter a loss."""
    return np.maximum(logp, SNAPSHOT_LOG_PROB_FLOOR)


def make_policy(obs_dim: int, action_low, action_high, hidden_sizes,
                rng: np.random.Generator) -> SquashedGaussianPolicy:
    action_low = np.asarray(action_low, dtype=np.float64)
    sizes = [obs_dim, *hidden_sizes, 2 * action_low.size]
    return SquashedGaussianPolicy(diffcore.init_mlp(sizes, rng), action_low, action_high)
