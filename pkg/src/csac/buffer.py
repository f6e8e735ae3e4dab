"""Fixed-capacity ring replay memory with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    """One environment interaction record."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool
    truncated: bool = False


@dataclass
class Batch:
    """Stacked transitions (struct of arrays)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    truncateds: np.ndarray

    def __len__(self):
        return self.states.shape[0]


class ReplayBuffer:
    """Preallocated ring storage; insertion beyond capacity evicts the oldest entry."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.size = 0
        self._cursor = 0
        self._states = None
        self._actions = None
        self._rewards = None
        self._next_states = None
        self._terminals = None
        self._truncateds = None

    def _allocate(self, state_dim: int, action_dim: int):
        self._states = np.empty((self.capacity, state_dim))
        self._actions = np.empty((self.capacity, action_dim))
        self._rewards = np.empty(self.capacity)
        self._next_states = np.empty((self.capacity, state_dim))
        self._terminals = np.zeros(self.capacity, dtype=bool)
        self._truncateds = np.zeros(self.capacity, dtype=bool)

    def push(self, transition: Transition) -> None:
        state = np.asarray(transition.state, dtype=np.float64)
        action = np.asarray(transition.action, dtype=np.float64)
        next_state = np.asarray(transition.next_state, dtype=np.float64)
        if self._states is None:
            self._allocate(state.size, action.size)
        if state.shape != (self._states.shape[1],) or next_state.shape != state.shape:
            raise ValueError(f"state shape {state.shape} inconsistent with buffer")
        if action.shape != (self._actions.shape[1],):
            raise ValueError(f"action shape {action.shape} inconsistent with buffer")
        i = self._cursor
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = float(transition.reward)
        self._next_states[i] = next_state
        self._terminals[i] = bool(transition.terminal)
        self._truncateds[i] = bool(transition.truncated)
        self._cursor = (self._cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform with replacement; draws are reproducible under a seeded rng."""
        if batch_size > self.size:
            raise ValueError(f"batch_size {batch_size} exceeds buffer size {self.size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(
            states=self._states[idx].copy(),
            actions=self._actions[idx].copy(),
            rewards=self._rewards[idx].copy(),
            next_states=self._next_states[idx].copy(),
            terminals=self._terminals[idx].copy(),
            truncateds=self._truncateds[idx].copy(),
        )

    def __len__(self):
        return self.size
