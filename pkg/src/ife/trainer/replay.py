"""Uniform replay with 8-bit observation storage and n-step transition assembly."""
from __future__ import annotations

from collections import deque
from typing import Deque, List, NamedTuple, Tuple

import numpy as np


def encode_obs(obs: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(obs) * 255.0).astype(np.uint8)


def decode_obs(codes: np.ndarray) -> np.ndarray:
    return codes.astype(np.float64) / 255.0


class NStepSample(NamedTuple):
    obs: np.ndarray
    action: int
    ret: float  # discounted reward sum over the window
    next_obs: np.ndarray
    discount: float  # gamma**k multiplier on the bootstrap; 0 when the window hit a terminal


class Batch(NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    returns: np.ndarray
    next_obs: np.ndarray
    discounts: np.ndarray


class NStepAccumulator:
    """Turns one environment's step stream into n-step samples."""

    def __init__(self, n: int, gamma: float):
        self.n = n
        self.gamma = gamma
        self._window: Deque[Tuple[np.ndarray, int, float]] = deque()

    def _emit(self, next_obs: np.ndarray, terminal: bool) -> NStepSample:
        ret, disc = 0.0, 1.0
        for _, _, r in self._window:
            ret += disc * r
            disc *= self.gamma
        obs, action, _ = self._window.popleft()
        return NStepSample(obs, action, ret, next_obs, 0.0 if terminal else disc)

    def push(self, obs, action: int, reward: float, next_obs, terminal: bool) -> List[NStepSample]:
        self._window.append((obs, action, reward))
        out = []
        if terminal:
            while self._window:
                out.append(self._emit(next_obs, True))
        elif len(self._window) == self.n:
            out.append(self._emit(next_obs, False))
        return out


class ReplayBuffer:
    def __init__(self, capacity: int, obs_shape: Tuple[int, ...], seed: int = 0):
        if capacity < 1:
            raise ValueError("replay capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity,) + tuple(obs_shape), dtype=np.uint8)
        self.next_obs = np.zeros_like(self.obs)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.returns = np.zeros(capacity)
        self.discounts = np.zeros(capacity)
        self.size = 0
        self._pos = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def add(self, sample: NStepSample) -> None:
        i = self._pos
        self.obs[i] = encode_obs(sample.obs)
        self.next_obs[i] = encode_obs(sample.next_obs)
        self.actions[i] = sample.action
        self.returns[i] = sample.ret
        self.discounts[i] = sample.discount
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if self.size < batch_size:
            raise ValueError(f"replay holds {self.size} samples, fewer than batch size {batch_size}")
        return self.rng.integers(self.size, size=batch_size)

    def sample(self, batch_size: int) -> Batch:
        idx = self.sample_indices(batch_size)
        return Batch(
            decode_obs(self.obs[idx]),
            self.actions[idx].copy(),
            self.returns[idx].copy(),
            decode_obs(self.next_obs[idx]),
            self.discounts[idx].copy(),
        )
