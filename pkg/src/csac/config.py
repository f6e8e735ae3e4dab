"""Flat key-value experiment configuration with CLI overrides."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .envs import ENV_REGISTRY

AGENT_KINDS = ("csac", "sac")


@dataclass(frozen=True)
class ExperimentConfig:
    agent: str = "csac"
    env: str = "pendulum"
    sigma: float = 0.2
    tau: float = 0.5
    gamma: float = 0.99
    rho: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch_size: int = 256
    buffer_capacity: int = 100_000
    warmup_steps: int = 1_000
    total_steps: int = 50_000
    hidden_sizes: tuple = (64, 64)
    eval_interval: int = 1_000
    eval_episodes: int = 10
    checkpoint_interval: int = 10_000
    seed: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    perturb: tuple = ()          # ((step, multiplier), ...)
    out_dir: str = "runs"
    timing: bool = False

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return validate_config(replace(self, **kwargs))


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def parse_int_list(text: str) -> tuple:
    text = text.strip()
    return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()


def parse_perturb_schedule(text: str) -> tuple:
    """'30000:2.0,45000:1.0' -> ((30000, 2.0), (45000, 1.0)), sorted by step."""
    entries = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        step_text, _, mult_text = chunk.partition(":")
        if not mult_text:
            raise ValueError(f"perturbation entry {chunk!r} must look like STEP:MULTIPLIER")
        entries.append((int(step_text), float(mult_text)))
    return tuple(sorted(entries))


_PARSERS = {
    "agent": str,
    "env": str,
    "sigma": float,
    "tau": float,
    "gamma": float,
    "rho": float,
    "actor_lr": float,
    "critic_lr": float,
    "batch_size": int,
    "buffer_capacity": int,
    "warmup_steps": int,
    "total_steps": int,
    "hidden_sizes": parse_int_list,
    "eval_interval": int,
    "eval_episodes": int,
    "checkpoint_interval": int,
    "seed": int,
    "seeds": parse_int_list,
    "perturb": parse_perturb_schedule,
    "out_dir": str,
    "timing": _parse_bool,
}


def parse_config_file(path) -> dict:
    """Flat 'key = value' lines; '#' starts a comment; unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key not in _PARSERS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _PARSERS[key](value.strip())
    return values


def apply_overrides(values: dict, overrides) -> dict:
    """Apply 'key=value' strings on top of file values."""
    out = dict(values)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} must look like key=value")
        key = key.strip()
        if key not in _PARSERS:
            raise ValueError(f"unknown config key {key!r}")
        out[key] = _PARSERS[key](value.strip())
    return out


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.agent not in AGENT_KINDS:
        raise ValueError(f"agent must be one of {AGENT_KINDS}, got {cfg.agent!r}")
    if cfg.env not in ENV_REGISTRY:
        raise ValueError(f"env must be one of {sorted(ENV_REGISTRY)}, got {cfg.env!r}")
    if cfg.sigma < 0 or cfg.tau < 0:
        raise ValueError("sigma and tau must be non-negative")
    if cfg.sigma + cfg.tau <= 0:
        raise ValueError("sigma + tau must be positive")
    if not 0.0 <= cfg.gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {cfg.gamma}")
    if not 0.0 <= cfg.rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {cfg.rho}")
    for name in ("actor_lr", "critic_lr"):
        if getattr(cfg, name) <= 0:
            raise ValueError(f"{name} must be positive")
    for name in ("batch_size", "buffer_capacity", "eval_interval", "eval_episodes"):
        if getattr(cfg, name) <= 0:
            raise ValueError(f"{name} must be positive")
    for name in ("warmup_steps", "total_steps", "checkpoint_interval"):
        if getattr(cfg, name) < 0:
            raise ValueError(f"{name} must be non-negative")
    if cfg.warmup_steps > cfg.total_steps:
        raise ValueError("warmup_steps cannot exceed total_steps")
    if cfg.batch_size > cfg.buffer_capacity:
        raise ValueError("batch_size cannot exceed buffer_capacity")
    if not cfg.hidden_sizes or any(h <= 0 for h in cfg.hidden_sizes):
        raise ValueError("hidden_sizes must be positive integers")
    if cfg.warmup_steps < cfg.batch_size and cfg.total_steps > cfg.warmup_steps:
        raise ValueError("warmup_steps must cover at least one batch before updates start")
    for step, mult in cfg.perturb:
        if not 0 < step <= cfg.total_steps:
            raise ValueError(f"perturbation step {step} outside (0, total_steps]")
        if mult <= 0:
            raise ValueError(f"perturbation multiplier must be positive, got {mult}")
    return cfg


def load_config(path=None, overrides=(), seed=None, out_dir=None) -> ExperimentConfig:
    """File < key=value overrides < explicit --seed/--out flags."""
    values = parse_config_file(path) if path is not None else {}
    values = apply_overrides(values, overrides)
    if seed is not None:
        values["seed"] = int(seed)
    if out_dir is not None:
        values["out_dir"] = str(out_dir)
    return validate_config(ExperimentConfig(**values))
