"""Conservative soft actor-critic agent.

The update step follows the standard off-policy loop: refresh the frozen
previous policy, build the gradient-free TD target from the target critics,
regress both online critics, take one reparameterized actor step on

    (tau + sigma) * log pi(a~|s) - tau * log pi_prev(a~|s) - min_i Q_i(s, a~)

and Polyak-average the targets. tau = 0 reduces the whole pipeline to SAC.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import critic as critic_mod
from . import diffcore
from . import policy as policy_mod
from .buffer import Batch
from .critic import TwinCritics
from .diffcore import NumericError
from .policy import PolicySnapshot, SquashedGaussianPolicy


@dataclass(frozen=True)
class RegularizationConfig:
    """Entropy/relative-entropy weights and their conservative-value-iteration form."""

    entropy_coef: float   # sigma
    rel_entropy_coef: float  # tau
    alpha: float          # tau / (tau + sigma)
    beta: float           # 1 / (tau + sigma)


def make_config(sigma: float, tau: float) -> RegularizationConfig:
    if sigma < 0 or tau < 0:
        raise ValueError(f"coefficients must be non-negative, got sigma={sigma}, tau={tau}")
    if sigma + tau <= 0:
        raise ValueError("sigma + tau must be positive (beta undefined otherwise)")
    return RegularizationConfig(
        entropy_coef=float(sigma),
        rel_entropy_coef=float(tau),
        alpha=tau / (tau + sigma),
        beta=1.0 / (tau + sigma),
    )


@dataclass
class ActorLossResult:
    loss: float
    grads: diffcore.Gradients
    pre_squash: np.ndarray
    log_prob: np.ndarray
    log_prob_prev: np.ndarray   # unfloored snapshot densities
    entropy_est: float


def _actor_loss_parts(pol: SquashedGaussianPolicy, prev: PolicySnapshot,
                      critics: TwinCritics, cfg: RegularizationConfig,
                      states, noise) -> ActorLossResult:
    """Loss value plus hand-chained reverse-mode gradients for the policy net.

    Gradients reach the policy through three routes: the live log-density,
    the frozen-policy density evaluated at the sampled action, and the
    minimum online critic; critic and snapshot parameters receive none.
    """
    sigma, tau = cfg.entropy_coef, cfg.rel_entropy_coef
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

    mean_p, _, log_std_p, _ = prev.heads(states)
    xi_p = (u - mean_p) * np.exp(-log_std_p)
    logp_prev_raw = policy_mod._log_density_given_heads(mean_p, log_std_p, u, pol.scale)
    logp_prev = policy_mod.floor_snapshot_log_prob(logp_prev_raw)
    floor_mask = logp_prev_raw > policy_mod.SNAPSHOT_LOG_PROB_FLOOR

    q1, tape1 = critic_mod.q_forward(critics.q1, states, action)
    q2, tape2 = critic_mod.q_forward(critics.q2, states, action)
    qmin = np.minimum(q1, q2)
    pick1 = q1 <= q2

    loss = float(np.mean((tau + sigma) * logp - tau * logp_prev - qmin))
    if not np.isfinite(loss):
        raise NumericError("non-finite actor loss")

    # d loss / d qmin = -1/n through whichever critic attains the minimum
    gy1 = np.where(pick1, -1.0 / n, 0.0)[:, None]
    gy2 = np.where(pick1, 0.0, -1.0 / n)[:, None]
    g_action = (diffcore.backward(tape1, gy1).d_input[:, obs_dim:]
                + diffcore.backward(tape2, gy2).d_input[:, obs_dim:])

    # live density: logp = sum_d [-c - ls - xi^2/2 - log(1 - tanh(u)^2) - log scale]
    # with xi = (u - mean) e^{-ls}; partials at fixed u, then u = mean + e^{ls} * noise
    coef = (tau + sigma) / n
    g_mean = coef * (xi * np.exp(-log_std))
    g_log_std = coef * (np.square(xi) - 1.0)
    g_u = coef * (-xi * np.exp(-log_std) + 2.0 * t)

    # frozen density: same functional form, parameters constant, flows via u only
    g_u = g_u + (-tau / n) * floor_mask[:, None] * (-xi_p * np.exp(-log_std_p) + 2.0 * t)

    # critic route: action = center + scale * tanh(u)
    g_u = g_u + g_action * pol.scale * (1.0 - np.square(t))

    g_mean = g_mean + g_u
    g_log_std = g_log_std + g_u * std * noise
    inside = (log_std_raw >= pol.log_std_min) & (log_std_raw <= pol.log_std_max)
    g_log_std_raw = g_log_std * inside

    out_grad = np.concatenate([g_mean, g_log_std_raw], axis=1)
    grads = diffcore.backward(tape, out_grad)

    return ActorLossResult(
        loss=loss,
        grads=grads,
        pre_squash=u,
        log_prob=logp,
        log_prob_prev=logp_prev_raw,
        entropy_est=float(np.mean(-logp)),
    )


def actor_loss(agent: "CsacAgent", batch: Batch, noise) -> ActorLossResult:
    return _actor_loss_parts(agent.policy, agent.prev_policy, agent.critics,
                             agent.cfg, batch.states, noise)


def preference(agent: "CsacAgent", observation, action) -> float:
    """tau * log pi_prev(a|s) + min over the online critics of Q(s, a)."""
    logp_prev = policy_mod.floor_snapshot_log_prob(
        agent.prev_policy.log_prob_action(observation, action))
    qmin = critic_mod.q_min(agent.critics, observation, action, use_targets=False)
    return float(agent.cfg.rel_entropy_coef * logp_prev + qmin)


class CsacAgent:
    """Owns the policy, its frozen previous copy, twin critics, and optimizer state."""

    def __init__(self, obs_dim: int, action_low, action_high, cfg: RegularizationConfig,
                 gamma: float = 0.99, rho: float = 0.005, hidden_sizes=(64, 64),
                 actor_lr: float = 3e-4, critic_lr: float = 3e-4, seed: int = 0):
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {gamma}")
        self.cfg = cfg
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
        self.prev_policy = policy_mod.snapshot(self.policy, taken_at_update=-1)
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
        """One full update phase; returns scalar diagnostics."""
        n = len(batch)
        self.prev_policy = policy_mod.snapshot(self.policy, taken_at_update=self.update_count)
        noise_next = self.rng.standard_normal((n, self.action_dim))
        noise_actor = self.rng.standard_normal((n, self.action_dim))

        y = critic_mod.td_target(batch, self.policy, self.prev_policy, self.cfg,
                                 self.gamma, self.critics, noise_next)
        closs = critic_mod.critic_loss(self.critics, batch, y)
        diffcore.optimizer_step(self.critic1_opt, self.critics.q1, closs.grads1)
        diffcore.optimizer_step(self.critic2_opt, self.critics.q2, closs.grads2)

        aresult = _actor_loss_parts(self.policy, self.prev_policy, self.critics,
                                    self.cfg, batch.states, noise_actor)
        diffcore.optimizer_step(self.actor_opt, self.policy.net, aresult.grads)

        self.critics.polyak(self.rho)

        # one-sample KL diagnostic: updated policy vs. the snapshot, at the
        # actions the actor step was computed on; clamped for logging only
        logp_new = policy_mod.log_prob(self.policy, batch.states, aresult.pre_squash)
        kl_samples = np.clip(logp_new - aresult.log_prob_prev, -100.0, 100.0)

        self.update_count += 1
        return {
            "critic_loss_1": closs.loss1,
            "critic_loss_2": closs.loss2,
            "actor_loss": aresult.loss,
            "entropy_est": aresult.entropy_est,
            "kl_est": float(np.mean(kl_samples)),
        }

    # --- checkpointing ---

    def to_payload(self) -> dict:
        return {
            "kind": "csac",
            "obs_dim": self.obs_dim,
            "action_low": self.policy.action_low.tolist(),
            "action_high": self.policy.action_high.tolist(),
            "sigma": self.cfg.entropy_coef,
            "tau": self.cfg.rel_entropy_coef,
            "gamma": self.gamma,
            "rho": self.rho,
            "hidden_sizes": list(self.hidden_sizes),
            "actor_lr": self.actor_lr,
            "critic_lr": self.critic_lr,
            "seed": self.seed,
            "policy_net": diffcore.mlp_to_payload(self.policy.net),
            "prev_policy_net": diffcore.mlp_to_payload(self.prev_policy.net),
            "prev_policy_taken_at": self.prev_policy.taken_at_update,
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
    def from_payload(cls, payload: dict) -> "CsacAgent":
        cfg = make_config(payload["sigma"], payload["tau"])
        agent = cls(payload["obs_dim"], payload["action_low"], payload["action_high"],
                    cfg, gamma=payload["gamma"], rho=payload["rho"],
                    hidden_sizes=payload["hidden_sizes"], actor_lr=payload["actor_lr"],
                    critic_lr=payload["critic_lr"], seed=payload["seed"])
        _restore_common(agent, payload)
        return agent


def _restore_common(agent, payload: dict) -> None:
    agent.policy.net = diffcore.mlp_from_payload(payload["policy_net"])
    agent.critics.q1 = diffcore.mlp_from_payload(payload["q1"])
    agent.critics.q2 = diffcore.mlp_from_payload(payload["q2"])
    agent.critics.target_q1 = diffcore.mlp_from_payload(payload["target_q1"])
    agent.critics.target_q2 = diffcore.mlp_from_payload(payload["target_q2"])
    agent.actor_opt = diffcore.adam_from_payload(payload["actor_opt"], agent.policy.net)
    agent.critic1_opt = diffcore.adam_from_payload(payload["critic1_opt"], agent.critics.q1)
    agent.critic2_opt = diffcore.adam_from_payload(payload["critic2_opt"], agent.critics.q2)
    agent.rng = _rng_from_jsonable(payload["rng_state"])
    agent.update_count = int(payload["update_count"])
    agent.act_explore_calls = int(payload["act_explore_calls"])
    agent.act_eval_calls = int(payload["act_eval_calls"])
    if "prev_policy_net" in payload:
        frozen = SquashedGaussianPolicy(
            diffcore.mlp_from_payload(payload["prev_policy_net"]),
            agent.policy.action_low, agent.policy.action_high,
            agent.policy.log_std_min, agent.policy.log_std_max)
        agent.prev_policy = policy_mod.snapshot(frozen, payload["prev_policy_taken_at"])


def _rng_state_to_jsonable(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {"bit_generator": state["bit_generator"],
            "state": {k: int(v) for k, v in state["state"].items()},
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"])}


def _rng_from_jsonable(doc: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": doc["bit_generator"],
        "state": {k: int(v) for k, v in doc["state"].items()},
        "has_uint32": int(doc["has_uint32"]),
        "uinteger": int(doc["uinteger"]),
    }
    return rng
