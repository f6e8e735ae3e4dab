"""Deterministic, seedable continuous-control tasks with a runtime friction hook.

Pendulum swing-up is the primary benchmark; the point-mass reacher is a
secondary sanity task. Both are pure functions of (seed, action sequence,
perturbation schedule).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import NumericError


@dataclass(frozen=True)
class EnvSpec:
    observation_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int


def _wrap_angle(theta):
    """Map to (-pi, pi]."""
    wrapped = (theta + np.pi) % (2.0 * np.pi) - np.pi
    if wrapped == -np.pi:
        wrapped = np.pi
    return wrapped


class PendulumEnv:
    """Torque-limited swing-up of a damped rod, angle measured from upright.

    Dynamics (semi-implicit Euler, dt = 0.05):
        theta_dd = (3 g / (2 l)) sin(theta) + 3 u / (m l^2) - friction_scale * b * theta_d
    with g = 10, l = 1, m = 1, b = 0.05. Velocity is clipped to +-8 and the
    reward is -(wrap(theta)^2 + 0.1 theta_d^2 + 0.001 u^2). Episodes truncate
    at 200 steps and never terminate.
    """

    GRAVITY = 10.0
    LENGTH = 1.0
    MASS = 1.0
    DAMPING = 0.05
    DT = 0.05
    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0

    spec = EnvSpec(observation_dim=3, action_dim=1,
                   action_low=np.array([-MAX_TORQUE]), action_high=np.array([MAX_TORQUE]),
                   max_episode_steps=200)

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self.friction_scale = 1.0
        self.theta = 0.0
        self.theta_dot = 0.0
        self._elapsed = 0
        self.action_violations = 0

    def reset(self, seed=None) -> np.ndarray:
        """theta uniform in (-pi, pi], theta_dot uniform in +-1."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        # uniform() draws from the half-open [-pi, pi); negating closes the top
        self.theta = -self._rng.uniform(-np.pi, np.pi)
        self.theta_dot = self._rng.uniform(-1.0, 1.0)
        self._elapsed = 0
        return self._observation()

    def _observation(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])

    def step(self, action):
        action = np.asarray(action, dtype=np.float64)
        if not np.isfinite(action).all():
            raise NumericError("non-finite action")
        u = float(action[0])
        if abs(u) > self.MAX_TORQUE:
            self.action_violations += 1
            u = float(np.clip(u, -self.MAX_TORQUE, self.MAX_TORQUE))

        theta_wrapped = _wrap_angle(self.theta)
        reward = -(theta_wrapped ** 2 + 0.1 * self.theta_dot ** 2 + 0.001 * u ** 2)

        accel = (3.0 * self.GRAVITY / (2.0 * self.LENGTH) * np.sin(self.theta)
                 + 3.0 * u / (self.MASS * self.LENGTH ** 2)
                 - self.friction_scale * self.DAMPING * self.theta_dot)
        self.theta_dot = float(np.clip(self.theta_dot + accel * self.DT,
                                       -self.MAX_SPEED, self.MAX_SPEED))
        self.theta = self.theta + self.theta_dot * self.DT

        self._elapsed += 1
        truncated = self._elapsed >= self.spec.max_episode_steps
        return self._observation(), reward, False, truncated

    def set_dynamics_scale(self, friction_multiplier: float) -> None:
        """Applies from the next step onward; does not reset episode state."""
        if friction_multiplier <= 0:
            raise ValueError(f"friction multiplier must be positive, got {friction_multiplier}")
        self.friction_scale = float(friction_multiplier)

    def mechanical_energy(self) -> float:
        """Rotational kinetic plus gravitational potential of the rod (zero at hanging)."""
        inertia = self.MASS * self.LENGTH ** 2 / 3.0
        kinetic = 0.5 * inertia * self.theta_dot ** 2
        potential = self.MASS * self.GRAVITY * (self.LENGTH / 2.0) * (1.0 + np.cos(self.theta))
        return float(kinetic + potential)


class ReacherEnv:
    """Point mass on a friction-damped plane steering to a per-episode goal.

    Double-integrator dynamics inside the unit box: velocity and position are
    clamped, the action is a bounded acceleration, reward is the negative
    goal distance minus a small control cost.
    """

    DT = 0.1
    DAMPING = 0.2
    MAX_SPEED = 1.0
    BOX = 1.0

    spec = EnvSpec(observation_dim=6, action_dim=2,
                   action_low=np.array([-1.0, -1.0]), action_high=np.array([1.0, 1.0]),
                   max_episode_steps=200)

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self.friction_scale = 1.0
        self.position = np.zeros(2)
        self.velocity = np.zeros(2)
        self.goal = np.zeros(2)
        self._elapsed = 0
        self.action_violations = 0

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.position = self._rng.uniform(-0.8, 0.8, size=2)
        self.velocity = np.zeros(2)
        self.goal = self._rng.uniform(-0.8, 0.8, size=2)
        self._elapsed = 0
        return self._observation()

    def _observation(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.goal])

    def step(self, action):
        action = np.asarray(action, dtype=np.float64)
        if not np.isfinite(action).all():
            raise NumericError("non-finite action")
        if np.any(np.abs(action) > 1.0):
            self.action_violations += 1
            action = np.clip(action, -1.0, 1.0)

        dist = float(np.linalg.norm(self.position - self.goal))
        reward = -dist - 0.01 * float(action @ action)

        accel = action - self.friction_scale * self.DAMPING * self.velocity
        self.velocity = np.clip(self.velocity + accel * self.DT,
                                -self.MAX_SPEED, self.MAX_SPEED)
        self.position = np.clip(self.position + self.velocity * self.DT,
                                -self.BOX, self.BOX)

        self._elapsed += 1
        truncated = self._elapsed >= self.spec.max_episode_steps
        return self._observation(), reward, False, truncated

    def set_dynamics_scale(self, friction_multiplier: float) -> None:
        if friction_multiplier <= 0:
            raise ValueError(f"friction multiplier must be positive, got {friction_multiplier}")
        self.friction_scale = float(friction_multiplier)


ENV_REGISTRY = {"pendulum": PendulumEnv, "reacher": ReacherEnv}


def make_env(name: str, seed: int = 0):
    try:
        return ENV_REGISTRY[name](seed=seed)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENV_REGISTRY)}")
