"""Exact tabular oracle for mixed entropy/relative-entropy policy iteration.

Finite MDPs make the closed-form policy update, the preference/log-sum-exp
route, and the regularized Bellman fixed point computable to machine
precision, so the continuous-control agent's math can be checked against
ground truth. Integrals over actions become discrete sums throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRANSITION_ROW_TOL = 1e-12


class FixtureError(ValueError):
    """A fixture file failed validation."""


@dataclass
class TabularMDP:
    n_states: int
    n_actions: int
    transitions: np.ndarray   # P[s, a, s'], rows sum to 1
    rewards: np.ndarray       # r[s, a]
    gamma: float

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.n_states <= 0 or self.n_actions <= 0:
            raise ValueError("n_states and n_actions must be positive")
        if self.transitions.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(f"transition tensor shape {self.transitions.shape}")
        if self.rewards.shape != (self.n_states, self.n_actions):
            raise ValueError(f"reward matrix shape {self.rewards.shape}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        sums = self.transitions.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > TRANSITION_ROW_TOL) or np.any(self.transitions < 0):
            raise ValueError("transition rows must be distributions summing to 1")


@dataclass
class TabularIterate:
    q: np.ndarray          # Q[s, a]
    preferences: np.ndarray  # P[s, a]
    values: np.ndarray     # V[s]
    policy: np.ndarray     # pi[s, a], strictly positive rows
    iteration: int


def uniform_policy(mdp: TabularMDP) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


@dataclass(frozen=True)
class RegularizerWeights:
    """Bare (sigma, tau) carrier for policy evaluation.

    Unlike the agent's config this permits sigma = tau = 0, where evaluation
    degenerates to the plain Bellman fixed point (no CVI parameters exist
    there).
    """

    entropy_coef: float = 0.0
    rel_entropy_coef: float = 0.0


def plain_weights(sigma: float = 0.0, tau: float = 0.0) -> RegularizerWeights:
    return RegularizerWeights(float(sigma), float(tau))


def random_mdp(n_states: int, n_actions: int, gamma: float,
               rng: np.random.Generator) -> TabularMDP:
    """Transition rows from a flat simplex, rewards uniform in [0, 1]."""
    transitions = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    rewards = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(n_states, n_actions, transitions, rewards, gamma)


def _logsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))).squeeze(axis)


def _safe_log_policy(pi):
    """log pi with underflowed entries floored at the smallest normal double.

    The closed-form update never produces exact zeros mathematically; zeros
    only appear when exp(beta * gap) underflows, so flooring preserves the
    fixed point while keeping the log finite. Both update routes share this
    so their equivalence is exact.
    """
    return np.log(np.maximum(pi, np.finfo(np.float64).tiny))


def closed_form_update(mdp: TabularMDP, iterate: TabularIterate, cfg) -> np.ndarray:
    """Per state: pi'[a] proportional to pi[a]^alpha * exp(beta * Q[a]).

    Computed in log space with max-subtraction so large beta * Q cannot
    overflow.
    """
    logits = cfg.alpha * _safe_log_policy(iterate.policy) + cfg.beta * iterate.q
    logits = logits - _logsumexp(logits, axis=1)[:, None]
    return np.exp(logits)


def preference_update(mdp: TabularMDP, iterate: TabularIterate, cfg):
    """The preference-function route: P = (alpha/beta) log pi + Q; V = LSE; pi = exp(beta(P - V)).

    Algebraically identical to closed_form_update; returned as
    (preferences, values, policy).
    """
    prefs = (cfg.alpha / cfg.beta) * _safe_log_policy(iterate.policy) + iterate.q
    values = _logsumexp(cfg.beta * prefs, axis=1) / cfg.beta
    pi = np.exp(cfg.beta * (prefs - values[:, None]))
    return prefs, values, pi


def policy_evaluation(mdp: TabularMDP, pi, cfg, prev_policy=None,
                      tol: float = 1e-10, max_iter: int = 200_000,
                      q_init=None) -> np.ndarray:
    """Fixed point of the entropy/KL-augmented Bellman operator for pi.

    prev_policy anchors the relative-entropy term; it defaults to pi itself
    (zero KL). Zero-probability actions contribute nothing to the
    regularizers. q_init warm-starts the sweep (the fixed point does not
    depend on it).
    """
    pi = np.asarray(pi, dtype=np.float64)
    prev = pi if prev_policy is None else np.asarray(prev_policy, dtype=np.float64)
    sigma, tau = cfg.entropy_coef, cfg.rel_entropy_coef
    with np.errstate(divide="ignore"):
        log_pi = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)), 0.0)
        log_prev = np.where(prev > 0, np.log(np.where(prev > 0, prev, 1.0)), 0.0)
    # per-state regularizer, constant in Q
    reg = np.sum(pi * (sigma * log_pi + tau * (log_pi - log_prev)), axis=1)
    q = np.zeros_like(mdp.rewards) if q_init is None else np.array(q_init, dtype=np.float64)
    for _ in range(max_iter):
        v = np.sum(pi * q, axis=1) - reg
        q_next = mdp.rewards + mdp.gamma * (mdp.transitions @ v)
        if np.max(np.abs(q_next - q)) < tol:
            return q_next
        q = q_next
    raise RuntimeError(f"policy evaluation did not reach residual {tol} in {max_iter} sweeps")


def make_iterate(mdp: TabularMDP, cfg, q=None, pi=None, iteration: int = 0) -> TabularIterate:
    """Assemble a mutually consistent iterate from (q, pi) via the preference route."""
    q = np.zeros((mdp.n_states, mdp.n_actions)) if q is None else np.asarray(q, dtype=np.float64)
    pi = uniform_policy(mdp) if pi is None else np.asarray(pi, dtype=np.float64)
    seed = TabularIterate(q=q, preferences=None, values=None, policy=pi, iteration=iteration)
    prefs, values, pi_next = preference_update(mdp, seed, cfg)
    return TabularIterate(q=q, preferences=prefs, values=values, policy=pi_next,
                          iteration=iteration)


def regularized_policy_iteration(mdp: TabularMDP, cfg, n_iterations: int,
                                 eval_tol: float = 1e-10):
    """Run the full outer loop; returns the final (pi, q) pair.

    The relative-entropy anchor for each evaluation is the previous outer
    iterate's policy, mirroring the agent's snapshot cadence.
    """
    pi = uniform_policy(mdp)
    prev_pi = pi
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for k in range(n_iterations):
        q = policy_evaluation(mdp, pi, cfg, prev_policy=prev_pi, tol=eval_tol, q_init=q)
        iterate = TabularIterate(q=q, preferences=None, values=None, policy=pi, iteration=k)
        pi_next = closed_form_update(mdp, iterate, cfg)
        prev_pi, pi = pi, pi_next
    return pi, q


def value_iteration(mdp: TabularMDP, tol: float = 1e-12, max_iter: int = 500_000):
    """Exact unregularized value iteration; returns (q_star, greedy deterministic policy)."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        v = q.max(axis=1)
        q_next = mdp.rewards + mdp.gamma * (mdp.transitions @ v)
        if np.max(np.abs(q_next - q)) < tol:
            q = q_next
            break
        q = q_next
    else:
        raise RuntimeError("value iteration did not converge")
    return q, q.argmax(axis=1)


@dataclass
class LimitReport:
    epsilon: float
    n_states: int
    n_tied: int
    n_matching: int

    @property
    def all_match(self) -> bool:
        return self.n_matching == self.n_states - self.n_tied


def limit_check(mdp: TabularMDP, epsilons, n_iterations: int = 500,
                tie_tol: float = 1e-6) -> list[LimitReport]:
    """Shrink sigma = tau = eps and report per-state argmax agreement with the greedy policy.

    States whose top two optimal Q-values are within tie_tol are excluded
    from the match count.
    """
    from .agent import make_config

    q_star, greedy = value_iteration(mdp)
    sorted_q = np.sort(q_star, axis=1)
    gaps = sorted_q[:, -1] - sorted_q[:, -2] if mdp.n_actions > 1 else np.full(mdp.n_states, np.inf)
    tied = gaps <= tie_tol
    reports = []
    for eps in epsilons:
        cfg = make_config(eps, eps)
        pi, _ = regularized_policy_iteration(mdp, cfg, n_iterations)
        match = (pi.argmax(axis=1) == greedy) & ~tied
        reports.append(LimitReport(epsilon=float(eps), n_states=mdp.n_states,
                                   n_tied=int(tied.sum()), n_matching=int(match.sum())))
    return reports


# --- fixture files (plain text) ---

def write_fixture(path, mdp: TabularMDP, comment: str = "") -> None:
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(f"n_states {mdp.n_states}")
    lines.append(f"n_actions {mdp.n_actions}")
    lines.append(f"gamma {float(mdp.gamma)!r}")
    for s in range(mdp.n_states):
        vals = " ".join(repr(float(v)) for v in mdp.rewards[s])
        lines.append(f"r {s} {vals}")
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            vals = " ".join(repr(float(v)) for v in mdp.transitions[s, a])
            lines.append(f"t {s} {a} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_fixture(path) -> TabularMDP:
    n_states = n_actions = None
    gamma = None
    rewards = {}
    transitions = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "n_states":
                n_states = int(parts[1])
            elif parts[0] == "n_actions":
                n_actions = int(parts[1])
            elif parts[0] == "gamma":
                gamma = float(parts[1])
            elif parts[0] == "r":
                rewards[int(parts[1])] = [float(v) for v in parts[2:]]
            elif parts[0] == "t":
                transitions[(int(parts[1]), int(parts[2]))] = [float(v) for v in parts[3:]]
            else:
                raise FixtureError(f"{path}:{lineno}: unknown record {parts[0]!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, FixtureError):
                raise
            raise FixtureError(f"{path}:{lineno}: malformed line {raw!r}") from exc
    if n_states is None or n_actions is None or gamma is None:
        raise FixtureError(f"{path}: missing n_states/n_actions/gamma header")
    r = np.zeros((n_states, n_actions))
    p = np.zeros((n_states, n_actions, n_states))
    try:
        for s in range(n_states):
            r[s] = rewards[s]
            for a in range(n_actions):
                p[s, a] = transitions[(s, a)]
    except (KeyError, ValueError) as exc:
        raise FixtureError(f"{path}: incomplete or mis-sized records") from exc
    try:
        return TabularMDP(n_states, n_actions, p, r, gamma)
    except ValueError as exc:
        raise FixtureError(f"{path}: {exc}") from exc
