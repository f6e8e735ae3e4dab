"""Experiment orchestration: the training loop, evaluation, and the three protocols.

Every run is a pure function of (config, seed): rng streams are derived from
the master seed per role, evaluation uses its own seeded environments, and
metrics are written as CSV with repr-exact floats.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore, oracle
from .agent import CsacAgent, make_config
from .buffer import ReplayBuffer, Transition
from .config import ExperimentConfig, validate_config
from .diffcore import NumericError
from .envs import ENV_REGISTRY, make_env
from .sac_reference import SacAgent

METRICS_HEADER = ("step,eval_return_mean,eval_return_std,critic_loss_1,critic_loss_2,"
                  "actor_loss,entropy_est,kl_est,wall_secs")

_ROLE_ENV, _ROLE_AGENT, _ROLE_LOOP, _ROLE_EVAL = 0, 1, 2, 3


def derive_seed(master: int, role: int, *extra) -> int:
    return int(np.random.SeedSequence([int(master), role, *map(int, extra)]).generate_state(1)[0])


def make_agent(config: ExperimentConfig, seed: int):
    agent_seed = derive_seed(seed, _ROLE_AGENT)
    spec = ENV_REGISTRY[config.env].spec
    common = dict(gamma=config.gamma, rho=config.rho, hidden_sizes=config.hidden_sizes,
                  actor_lr=config.actor_lr, critic_lr=config.critic_lr, seed=agent_seed)
    if config.agent == "csac":
        return CsacAgent(spec.observation_dim, spec.action_low, spec.action_high,
                         make_config(config.sigma, config.tau), **common)
    return SacAgent(spec.observation_dim, spec.action_low, spec.action_high,
                    sigma=config.sigma, **common)


def _fmt(value) -> str:
    return repr(float(value))


@dataclass
class TrainResult:
    metrics_path: Path
    checkpoint_path: Path
    summary: dict
    aborted: bool = False
    abort_reason: str = ""


def _rollout_deterministic(agent, env, episode_seed: int) -> float:
    obs = env.reset(seed=episode_seed)
    total = 0.0
    while True:
        action = agent.act(obs, explore=False)
        obs, reward, terminal, truncated = env.step(action)
        total += reward
        if terminal or truncated:
            return total


def _eval_stats(agent, config: ExperimentConfig, seed: int, friction: float):
    """Deterministic-policy evaluation on a fixed per-run episode suite."""
    returns = []
    for ep in range(config.eval_episodes):
        env = make_env(config.env, seed=0)
        env.set_dynamics_scale(friction)
        returns.append(_rollout_deterministic(agent, env, derive_seed(seed, _ROLE_EVAL, ep)))
    returns = np.asarray(returns)
    return float(returns.mean()), float(returns.std())


def _save_agent_checkpoint(path, agent, config: ExperimentConfig, friction: float) -> None:
    payload = agent.to_payload()
    payload["env_name"] = config.env
    payload["friction_scale"] = friction
    diffcore.write_checkpoint(path, {"agent": payload})


def load_agent_checkpoint(path):
    """Returns (agent, env_name, friction_scale)."""
    doc = diffcore.read_checkpoint(path)
    payload = doc["agent"]
    cls = CsacAgent if payload["kind"] == "csac" else SacAgent
    return cls.from_payload(payload), payload["env_name"], payload["friction_scale"]


def train(config: ExperimentConfig, seed=None, out_dir=None) -> TrainResult:
    """Warmup with uniform random actions, then one update per environment step.

    Writes metrics rows at every evaluation, periodic + final checkpoints,
    and a run summary. A non-finite loss writes a diagnostic row and
    re-raises NumericError.
    """
    config = validate_config(config)
    seed = config.seed if seed is None else int(seed)
    run_dir = Path(out_dir if out_dir is not None else config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / f"metrics_seed{seed}.csv"
    checkpoint_path = run_dir / f"checkpoint_seed{seed}.json"

    env = make_env(config.env, seed=derive_seed(seed, _ROLE_ENV))
    agent = make_agent(config, seed)
    buffer = ReplayBuffer(config.buffer_capacity)
    loop_rng = np.random.default_rng(derive_seed(seed, _ROLE_LOOP))
    schedule = dict(config.perturb)
    spec = env.spec

    friction = 1.0
    start_time = time.perf_counter()
    diag_sums = dict.fromkeys(
        ("critic_loss_1", "critic_loss_2", "actor_loss", "entropy_est", "kl_est"), 0.0)
    diag_count = 0
    eval_rows = []
    episode_return = 0.0
    abort_reason = ""

    def write_metrics():
        with open(metrics_path, "w") as fh:
            fh.write(METRICS_HEADER + "\n")
            for row in eval_rows:
                fh.write(",".join([str(row[0])] + [_fmt(v) for v in row[1:]]) + "\n")

    obs = env.reset()
    step = 0
    try:
        for step in range(1, config.total_steps + 1):
            if step in schedule:
                friction = schedule[step]
                env.set_dynamics_scale(friction)
            if step <= config.warmup_steps:
                action = loop_rng.uniform(spec.action_low, spec.action_high)
            else:
                action = agent.act(obs, explore=True)
            next_obs, reward, terminal, truncated = env.step(action)
            buffer.push(Transition(obs, action, reward, next_obs, terminal, truncated))
            episode_return += reward
            if terminal or truncated:
                obs = env.reset()
                episode_return = 0.0
            else:
                obs = next_obs

            if step > config.warmup_steps:
                batch = buffer.sample(config.batch_size, loop_rng)
                metrics = agent.update_step(batch)
                for key in diag_sums:
                    diag_sums[key] += metrics[key]
                diag_count += 1

            if step % config.eval_interval == 0:
                mean, std = _eval_stats(agent, config, seed, friction)
                if diag_count:
                    diags = [diag_sums[k] / diag_count for k in diag_sums]
                else:
                    diags = [math.nan] * len(diag_sums)
                wall = time.perf_counter() - start_time if config.timing else 0.0
                eval_rows.append((step, mean, std, *diags, wall))
                diag_sums = dict.fromkeys(diag_sums, 0.0)
                diag_count = 0

            if config.checkpoint_interval and step % config.checkpoint_interval == 0:
                _save_agent_checkpoint(checkpoint_path, agent, config, friction)
    except NumericError:
        # diagnostic row at the aborting step, then propagate for exit code 2
        eval_rows.append((step, math.nan, math.nan, math.nan, math.nan, math.nan,
                          math.nan, math.nan, 0.0))
        write_metrics()
        raise

    write_metrics()
    _save_agent_checkpoint(checkpoint_path, agent, config, friction)

    means = [row[1] for row in eval_rows]
    summary = {
        "seed": seed,
        "agent": config.agent,
        "env": config.env,
        "total_steps": config.total_steps,
        "warmup_steps": config.warmup_steps,
        "buffer_size": len(buffer),
        "act_explore_calls": agent.act_explore_calls,
        "update_count": agent.update_count,
        "final_eval_return": means[-1] if means else None,
        "max_eval_return": max(means) if means else None,
    }
    if config.timing:
        summary["wall_secs"] = time.perf_counter() - start_time
    with open(run_dir / f"summary_seed{seed}.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    return TrainResult(metrics_path=metrics_path, checkpoint_path=checkpoint_path,
                       summary=summary, aborted=bool(abort_reason), abort_reason=abort_reason)


def evaluate(checkpoint_path, env_name=None, n_episodes: int = 10, seed: int = 0,
             friction=None):
    """Deterministic-policy statistics for a stored agent: (mean, stddev)."""
    agent, stored_env, stored_friction = load_agent_checkpoint(checkpoint_path)
    env_name = stored_env if env_name is None else env_name
    friction = stored_friction if friction is None else float(friction)
    returns = []
    for ep in range(n_episodes):
        env = make_env(env_name, seed=0)
        env.set_dynamics_scale(friction)
        ep_seed = int(np.random.SeedSequence([int(seed), ep]).generate_state(1)[0])
        returns.append(_rollout_deterministic(agent, env, ep_seed))
    returns = np.asarray(returns)
    return float(returns.mean()), float(returns.std())


def read_metrics(path):
    """Parse a metrics CSV into a list of dict rows."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path}: malformed metrics header")
    names = METRICS_HEADER.split(",")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(names):
            raise ValueError(f"{path}:{lineno}: expected {len(names)} fields")
        try:
            row = {"step": int(parts[0])}
            row.update({k: float(v) for k, v in zip(names[1:], parts[1:])})
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed metrics row") from exc
        rows.append(row)
    return rows


def steps_to_threshold(metrics_path, threshold: float):
    """First evaluation step whose mean return reaches the threshold, else None."""
    for row in read_metrics(metrics_path):
        if not math.isnan(row["eval_return_mean"]) and row["eval_return_mean"] >= threshold:
            return row["step"]
    return None


def ablate_tau(config: ExperimentConfig, tau_list, out_dir=None) -> Path:
    """One train per (tau, seed); emits a per-tau summary table."""
    base_dir = Path(out_dir if out_dir is not None else config.out_dir)
    base_dir.mkdir(parents=True, exist_ok=True)
    summary_path = base_dir / "ablation_summary.csv"
    rows = []
    for tau in tau_list:
        run_cfg = config.with_overrides(tau=float(tau))
        finals, curves = [], []
        for seed in config.seeds:
            result = train(run_cfg, seed=seed,
                           out_dir=base_dir / f"tau_{tau:g}")
            finals.append(result.summary["final_eval_return"])
            curves.append([r["eval_return_mean"] for r in read_metrics(result.metrics_path)])
        cross_seed_mean = np.mean(np.asarray(curves), axis=0)
        rows.append((float(tau), len(config.seeds), float(np.mean(finals)),
                     float(np.std(finals)), float(np.max(cross_seed_mean))))
    with open(summary_path, "w") as fh:
        fh.write("tau,n_seeds,final_return_mean,final_return_std,max_avg_return\n")
        for row in rows:
            fh.write(",".join([_fmt(row[0]), str(row[1])] + [_fmt(v) for v in row[2:]]) + "\n")
    return summary_path


@dataclass
class RecoveryReport:
    seed: int
    perturb_step: int | None
    baseline_return: float | None
    post_min_return: float | None
    recovery_step: int | None
    recovered: bool

    def populated(self) -> bool:
        return (self.perturb_step is not None and self.baseline_return is not None
                and self.post_min_return is not None and self.recovery_step is not None)


def _recovery_from_metrics(rows, perturb_step, seed: int) -> RecoveryReport:
    if perturb_step is None:
        return RecoveryReport(seed, None, None, None, None, False)
    before = [r for r in rows if r["step"] < perturb_step]
    after = [r for r in rows if r["step"] >= perturb_step]
    baseline = before[-1]["eval_return_mean"] if before else None
    post_min = min((r["eval_return_mean"] for r in after), default=None)
    recovery_step = None
    if baseline is not None:
        floor = baseline - 0.1 * abs(baseline)
        for r in after:
            if r["eval_return_mean"] >= floor:
                recovery_step = r["step"]
                break
    return RecoveryReport(seed=seed, perturb_step=perturb_step, baseline_return=baseline,
                          post_min_return=post_min, recovery_step=recovery_step,
                          recovered=recovery_step is not None)


def perturb_run(config: ExperimentConfig, schedule=None, out_dir=None):
    """Train with a mid-run dynamics perturbation; report recovery per seed.

    Recovery = first evaluation at or after the first perturbation whose mean
    return is back within 10% of the last pre-perturbation evaluation.
    Returns (reports, report_path).
    """
    schedule = tuple(config.perturb) if schedule is None else tuple(sorted(schedule))
    run_cfg = config.with_overrides(perturb=schedule)
    base_dir = Path(out_dir if out_dir is not None else config.out_dir)
    base_dir.mkdir(parents=True, exist_ok=True)
    first_step = schedule[0][0] if schedule else None
    reports = []
    for seed in config.seeds:
        result = train(run_cfg, seed=seed, out_dir=base_dir)
        rows = read_metrics(result.metrics_path)
        reports.append(_recovery_from_metrics(rows, first_step, seed))
    report_path = base_dir / "recovery_report.json"
    with open(report_path, "w") as fh:
        json.dump([r.__dict__ for r in reports], fh, indent=1)
    return reports, report_path


def median_recovery_step(reports):
    """Median recovery step; unrecovered seeds count as +inf."""
    vals = [float("inf") if r.recovery_step is None else float(r.recovery_step)
            for r in reports]
    return float(np.median(vals)) if vals else None


# --- oracle check suite ---

def _check_routes(mdp, cfg, n_iterations=30, tol=1e-10):
    """Route equivalence + self-consistency along a full outer run."""
    pi = oracle.uniform_policy(mdp)
    prev_pi = pi
    rng = np.random.default_rng(0)
    for k in range(n_iterations):
        q = oracle.policy_evaluation(mdp, pi, cfg, prev_policy=prev_pi)
        iterate = oracle.TabularIterate(q=q, preferences=None, values=None,
                                        policy=pi, iteration=k)
        pi_closed = oracle.closed_form_update(mdp, iterate, cfg)
        prefs, values, pi_pref = oracle.preference_update(mdp, iterate, cfg)
        if np.max(np.abs(pi_closed - pi_pref)) > tol:
            return False, f"route mismatch at iteration {k}"
        recon = np.exp(cfg.beta * (prefs - values[:, None]))
        if np.max(np.abs(recon - pi_pref)) > tol:
            return False, f"self-consistency failure at iteration {k}"
        if np.max(np.abs(pi_pref.sum(axis=1) - 1.0)) > tol:
            return False, f"policy rows do not normalize at iteration {k}"
        shift = rng.normal(size=(mdp.n_states, 1))
        shifted = oracle.TabularIterate(q=q + shift, preferences=None, values=None,
                                        policy=pi, iteration=k)
        if np.max(np.abs(oracle.closed_form_update(mdp, shifted, cfg) - pi_closed)) > 1e-10:
            return False, f"shift invariance failure at iteration {k}"
        prev_pi, pi = pi, pi_closed
    return True, f"{n_iterations} iterations consistent"


def _check_special_cases(mdp, tol=1e-10):
    """tau = 0 reduces to the softmax-of-Q update; sigma = 0 to the KL-anchored update."""
    rng = np.random.default_rng(1)
    q = rng.normal(size=(mdp.n_states, mdp.n_actions))
    pi = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
    iterate = oracle.TabularIterate(q=q, preferences=None, values=None, policy=pi, iteration=0)

    cfg = make_config(0.7, 0.0)
    got = oracle.closed_form_update(mdp, iterate, cfg)
    want = np.exp(q / 0.7 - oracle._logsumexp(q / 0.7, axis=1)[:, None])
    if np.max(np.abs(got - want)) > tol:
        return False, "tau=0 does not match the entropy-only softmax update"

    cfg = make_config(0.0, 0.7)
    got = oracle.closed_form_update(mdp, iterate, cfg)
    logits = np.log(pi) + q / 0.7
    want = np.exp(logits - oracle._logsumexp(logits, axis=1)[:, None])
    if np.max(np.abs(got - want)) > tol:
        return False, "sigma=0 does not match the KL-anchored update"
    return True, "limiting updates match"


def _check_unregularized_evaluation(mdp, tol=1e-8):
    """sigma = tau = 0 fixed point vs. a direct linear solve of the Bellman system."""
    rng = np.random.default_rng(2)
    pi = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
    q = oracle.policy_evaluation(mdp, pi, oracle.plain_weights())
    n = mdp.n_states * mdp.n_actions
    # (I - gamma P Pi) q = r, with (P Pi)[sa, s'a'] = P(s'|s,a) pi(a'|s')
    p_pi = np.einsum("san,nb->sanb", mdp.transitions, pi).reshape(n, n)
    q_lin = np.linalg.solve(np.eye(n) - mdp.gamma * p_pi, mdp.rewards.ravel())
    if np.max(np.abs(q.ravel() - q_lin)) > tol:
        return False, "fixed point disagrees with the linear solve"
    return True, "matches linear solve"


def oracle_check(fixture_dir):
    """Run the oracle invariant suites over every fixture; returns (ok, lines)."""
    fixture_dir = Path(fixture_dir)
    if not fixture_dir.is_dir():
        return False, [f"FAIL no fixtures: {fixture_dir} is not a directory"]
    paths = sorted(fixture_dir.glob("*.mdp"))
    if not paths:
        return False, [f"FAIL no fixtures found in {fixture_dir}"]
    cfg = make_config(0.2, 0.5)
    lines, ok = [], True
    for path in paths:
        try:
            mdp = oracle.read_fixture(path)
        except oracle.FixtureError as exc:
            lines.append(f"FAIL {path.name}: {exc}")
            ok = False
            continue
        for name, check in (("routes", lambda m: _check_routes(m, cfg)),
                            ("special-cases", _check_special_cases),
                            ("policy-evaluation", _check_unregularized_evaluation)):
            passed, detail = check(mdp)
            lines.append(f"{'PASS' if passed else 'FAIL'} {path.name} {name}: {detail}")
            ok = ok and passed
    return ok, lines


def default_fixture_dir() -> Path:
    return Path(__file__).parent / "fixtures"
