"""Independent soft actor-critic baseline.

This file re-derives the plain SAC update from scratch (entropy-regularized
TD target, twin-critic regression, reparameterized actor loss
sigma * log pi - min Q) without importing any of the conservative agent's
loss code. It exists both as the experiment baseline and as the oracle the
tau = 0 reduction is checked against.
"""

from __future__ import annotations

import numpy as np

from . import critic as critic_mod
from . import diffcore
from . import policy as policy_mod
from .buffer import Batch
from .critic import TwinCritics
from .diffcore import NumericError


def sac_td_target(batch: Batch, pol, critics: TwinCritics, sigma: float,
                  gamma: float, next_noise) -> np.ndarray:
    """y = r + gamma * (min_j Qhat_j(s', a') - sigma * log pi(a'|s')), terminal -> r."""
    next_action, _, logp = policy_mod.sample(pol, batch.next_states, next_noise)
    qhat1, _ = critic_mod.q_forward(critics.target_q1, batch.next_states, next_action)
    qhat2, _ = critic_mod.q_forward(critics.target_q2, batch.next_states, next_action)
    boot = np.minimum(qhat1, qhat2) - sigma * logp
    y = np.where(batch.terminals, batch.rewards, batch.rewards + gamma * boot)
    if not np.isfinite(y).all():
        raise NumericError("non-finite SAC TD target")
    return y


def sac_actor_loss_and_grads(pol, critics: TwinCritics, sigma: float, states, noise):
    """mean(sigma * log pi(a~|s) - min Q(s, a~)) with reverse-mode policy gradients.

    Derived directly: a~ = center + scale * tanh(mean + e^{ls} xi), and the
    squashed log-density differentiated through both its parameter and action
    arguments.
    """
    states = np.asarray(states, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    n = states.shape[0]
    obs_dim = pol.obs_dim

    mean, log_std_raw, log_std, tape = pol.heads(states)
    std = np.exp(log_std)
    u = mean + std * noise
    t = np.tanh(u)
    action = policy_mod.squash(pol, u)
    xi = (u - mean) * np.exp(-log_std)
    logp = policy_mod._log_density_given_heads(mean, log_std, u, pol.scale)

    q1, tape1 = critic_mod.q_forward(critics.q1, states, action)
    q2, tape2 = critic_mod.q_forward(critics.q2, states, action)
    qmin = np.minimum(q1, q2)
    pick1 = q1 <= q2

    loss = float(np.mean(sigma * logp - qmin))
    if not np.isfinite(loss):
        raise NumericError("non-finite SAC actor loss")

    gy1 = np.where(pick1, -1.0 / n, 0.0)[:, None]
    gy2 = np.where(pick1, 0.0, -1.0 / n)[:, None]
    g_action = (diffcore.backward(tape1, gy1).d_input[:, obs_dim:]
                + diffcore.backward(tape2, gy2).d_input[:, obs_dim:])

    coef = sigma / n
    g_mean = coef * (xi * np.exp(-log_std))
    g_log_std = coef * (np.square(xi) - 1.0)
    g_u = coef * (-xi * np.exp(-log_std) + 2.0 * t)
    g_u = g_u + g_action * pol.scale * (1.0 - np.square(t))

    g_mean = g_mean + g_u
    g_log_std = g_log_std + g_u * std * noise
    inside = (log_std_raw >= pol.log_std_min) & (log_std_raw <= pol.log_std_max)
    out_grad = np.concatenate([g_mean, g_log_std * inside], axis=1)
    grads = diffcore.backward(tape, out_grad)
    return loss, grads, float(np.mean(-logp))


class SacAgent:
    """Baseline agent with the same construction and rng discipline as the CSAC agent."""

    def __init__(self, obs_dim: int, action_low, action_high, sigma: float = 0.2,
                 gamma: float = 0.99, rho: float = 0.005, hidden_sizes=(64, 64),
                 actor_lr: float = 3e-4, critic_lr: float = 3e-4, seed: int = 0):
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {gamma}")
        self.sigma = float(sigma)
        self.gamma = float(gamma)
        self.rho = float(rho)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.actor_lr = float(actor_lr)
        self.critic_lr = float(critic_lr)
        self.seed = int(seed)
        self.rng = np.random.default_rng(seed)
        self.policy = policy_mod.make_policy(obs_dim, action_low, action_high,
                                             self.hidden_sizes, self.rng)
        self.critics = TwinCritics.make(obs_dim, self.policy.action_dim,
                                        self.hidden_sizes, self.rng)
        self.actor_opt = diffcore.adam_init(self.policy.net, actor_lr)
        self.critic1_opt = diffcore.adam_init(self.critics.q1, critic_lr)
        self.critic2_opt = diffcore.adam_init(self.critics.q2, critic_lr)
        self.update_count = 0
        self.act_explore_calls = 0
        self.act_eval_calls = 0

    @property
    def obs_dim(self):
        return self.policy.obs_dim

    @property
    def action_dim(self):
        return self.policy.action_dim

    def act(self, observation, explore: bool) -> np.ndarray:
        if explore:
            self.act_explore_calls += 1
            noise = self.rng.standard_normal(self.action_dim)
            action, _, _ = policy_mod.sample(self.policy, observation, noise)
            return action
        self.act_eval_calls += 1
        return policy_mod.deterministic_action(self.policy, observation)

    def update_step(self, batch: Batch) -> dict:
        n = len(batch)
        noise_next = self.rng.standard_normal((n, self.action_dim))
        noise_actor = self.rng.standard_normal((n, self.action_dim))

        y = sac_td_target(batch, self.policy, self.critics, self.sigma,
                          self.gamma, noise_next)
        closs = critic_mod.critic_loss(self.critics, batch, y)
        diffcore.optimizer_step(self.critic1_opt, self.critics.q1, closs.grads1)
        diffcore.optimizer_step(self.critic2_opt, self.critics.q2, closs.grads2)

        aloss, agrads, entropy_est = sac_actor_loss_and_grads(
            self.policy, self.critics, self.sigma, batch.states, noise_actor)
        diffcore.optimizer_step(self.actor_opt, self.policy.net, agrads)

        self.critics.polyak(self.rho)
        self.update_count += 1
        return {
            "critic_loss_1": closs.loss1,
            "critic_loss_2": closs.loss2,
            "actor_loss": aloss,
            "entropy_est": entropy_est,
            "kl_est": 0.0,
        }

    def to_payload(self) -> dict:
        from .agent import _rng_state_to_jsonable
        return {
            "kind": "sac",
            "obs_dim": self.obs_dim,
            "action_low": self.policy.action_low.tolist(),
            "action_high": self.policy.action_high.tolist(),
            "sigma": self.sigma,
            "gamma": self.gamma,
            "rho": self.rho,
            "hidden_sizes": list(self.hidden_sizes),
            "actor_lr": self.actor_lr,
            "critic_lr": self.critic_lr,
            "seed": self.seed,
            "policy_net": diffcore.mlp_to_payload(self.policy.net),
            "q1": diffcore.mlp_to_payload(self.critics.q1),
            "q2": diffcore.mlp_to_payload(self.critics.q2),
            "target_q1": diffcore.mlp_to_payload(self.critics.target_q1),
            "target_q2": diffcore.mlp_to_payload(self.critics.target_q2),
            "actor_opt": diffcore.adam_to_payload(self.actor_opt),
            "critic1_opt": diffcore.adam_to_payload(self.critic1_opt),
            "critic2_opt": diffcore.adam_to_payload(self.critic2_opt),
            "rng_state": _rng_state_to_jsonable(self.rng),
            "update_count": self.update_count,
            "act_explore_calls": self.act_explore_calls,
            "act_eval_calls": self.act_eval_calls,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "SacAgent":
        from .agent import _restore_common
        agent = cls(payload["obs_dim"], payload["action_low"], payload["action_high"],
                    sigma=payload["sigma"], gamma=payload["gamma"], rho=payload["rho"],
                    hidden_sizes=payload["hidden_sizes"], actor_lr=payload["actor_lr"],
                    critic_lr=payload["critic_lr"], seed=payload["seed"])
        _restore_common(agent, payload)
        return agent
