"""Twin Q-networks with Polyak-averaged targets; TD target and critic regression loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore, policy as policy_mod
from .diffcore import Mlp, NumericError


class TwinCritics:
    """Paired critics q1/q2 plus target copies that change only via polyak_update."""

    def __init__(self, q1: Mlp, q2: Mlp):
        if q1.layer_sizes != q2.layer_sizes:
            raise ValueError("twin critics must share an architecture")
        if q1.out_dim != 1:
            raise ValueError("critics must be scalar-output networks")
        self.q1 = q1
        self.q2 = q2
        self.target_q1 = q1.copy()
        self.target_q2 = q2.copy()

    @classmethod
    def make(cls, obs_dim: int, action_dim: int, hidden_sizes, rng: np.random.Generator):
        sizes = [obs_dim + action_dim, *hidden_sizes, 1]
        return cls(diffcore.init_mlp(sizes, rng), diffcore.init_mlp(sizes, rng))

    def polyak(self, rho: float) -> None:
        diffcore.polyak_update(self.target_q1, self.q1, rho)
        diffcore.polyak_update(self.target_q2, self.q2, rho)


def q_forward(net: Mlp, obs, action):
    """Scalar Q(s, a) via the concatenated input; returns (values, tape)."""
    obs = np.asarray(obs, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    x = np.concatenate([obs, action], axis=-1)
    out, tape = diffcore.forward(net, x)
    return out[..., 0], tape


def q_min(critics: TwinCritics, obs, action, use_targets: bool = False):
    """Minimum over the selected critic pair."""
    a = critics.target_q1 if use_targets else critics.q1
    b = critics.target_q2 if use_targets else critics.q2
    qa, _ = q_forward(a, obs, action)
    qb, _ = q_forward(b, obs, action)
    out = np.minimum(qa, qb)
    if not np.isfinite(out).all():
        raise NumericError("non-finite critic output")
    return out


def regularized_bootstrap(min_q, logp, logp_prev, sigma: float, tau: float):
    """Next-state value with entropy and relative-entropy corrections."""
    return min_q - sigma * logp - tau * (logp - logp_prev)


def td_target(batch, pol, prev, cfg, gamma: float, critics: TwinCritics, next_noise):
    """Regression target y per transition; gradient-free by construction.

    One next-action is sampled fresh from the current policy at s' (via the
    supplied standard-normal noise); terminal transitions bootstrap zero,
    truncated ones bootstrap normally.
    """
    _, pre_squash, logp = policy_mod.sample(pol, batch.next_states, next_noise)
    logp_prev = policy_mod.floor_snapshot_log_prob(prev.log_prob(batch.next_states, pre_squash))
    next_action = policy_mod.squash(pol, pre_squash)
    qhat1, _ = q_forward(critics.target_q1, batch.next_states, next_action)
    qhat2, _ = q_forward(critics.target_q2, batch.next_states, next_action)
    boot = regularized_bootstrap(np.minimum(qhat1, qhat2), logp, logp_prev,
                                 cfg.entropy_coef, cfg.rel_entropy_coef)
    y = np.where(batch.terminals, batch.rewards, batch.rewards + gamma * boot)
    if not np.isfinite(y).all():
        i = int(np.flatnonzero(~np.isfinite(y))[0])
        raise NumericError(
            f"non-finite TD target at batch index {i}: r={batch.rewards[i]!r}, "
            f"bootstrap={boot[i]!r}")
    return y


@dataclass
class CriticLossResult:
    loss1: float
    loss2: float
    grads1: diffcore.Gradients
    grads2: diffcore.Gradients


def critic_loss(critics: TwinCritics, batch, targets) -> CriticLossResult:
    """Mean squared TD error per critic, with gradients flowing only into that critic."""
    targets = np.asarray(targets, dtype=np.float64)
    n = targets.shape[0]
    result = []
    for net in (critics.q1, critics.q2):
        q, tape = q_forward(net, batch.states, batch.actions)
        residual = q - targets
        loss = float(np.mean(np.square(residual)))
        gy = (2.0 / n) * residual
        grads = diffcore.backward(tape, gy[:, None])
        result.append((loss, grads))
    return CriticLossResult(loss1=result[0][0], loss2=result[1][0],
                            grads1=result[0][1], grads2=result[1][1])
