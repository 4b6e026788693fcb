"""Exploration schedule, n-step returns and generalized advantage estimates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .hyper import Hyperparams


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool


def epsilon(frame: int, hp: Hyperparams) -> float:
    """Linear decay from ``eps_start`` to ``eps_end`` over ``eps_decay_frames``, then flat."""
    if frame < 0:
        raise ValueError(f"frame must be >= 0, got {frame}")
    if hp.eps_decay_frames <= 0 or frame >= hp.eps_decay_frames:
        return hp.eps_end
    frac = frame / hp.eps_decay_frames
    return hp.eps_start + frac * (hp.eps_end - hp.eps_start)


def nstep_target(transitions: Sequence[Transition], q_next: float, hp: Union[Hyperparams, float]) -> float:
    """Discounted reward sum over the window plus ``gamma**n * q_next``.

    Stops at the first terminal transition, in which case nothing is bootstrapped.
    ``hp`` may be a Hyperparams or a bare discount factor.
    """
    gamma = hp.gamma if isinstance(hp, Hyperparams) else float(hp)
    for prev, cur in zip(transitions, transitions[1:]):
        if prev.terminal:
            break
        if not np.array_equal(prev.next_obs, cur.obs):
            raise ValueError("transitions are not contiguous: next_obs does not match the following obs")
    total, discount = 0.0, 1.0
    for tr in transitions:
        total += discount * tr.reward
        discount *= gamma
        if tr.terminal:
            return total
    return total + discount * q_next


def gae_advantages(
    deltas: Sequence[float],
    hp: Hyperparams,
    terminals: Optional[Sequence[bool]] = None,
) -> List[float]:
    """``A_t = sum_k (gamma*lambda)^k delta_{t+k}``, cut after any terminal step."""
    decay = hp.gamma * hp.gae_lambda
    out = [0.0] * len(deltas)
    running = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        if terminals is not None and terminals[t]:
            running = 0.0
        running = deltas[t] + decay * running
        out[t] = running
    return out


def gae_batch(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    last_value: np.ndarray,
    gamma: float,
    lam: float,
) -> np.ndarray:
    """Vectorised GAE over a T x K rollout; ``dones[t]`` marks step t as episode end."""
    steps = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(last_value)
    next_value = last_value
    for t in range(steps - 1, -1, -1):
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * alive - values[t]
        running = delta + gamma * lam * alive * running
        adv[t] = running
        next_value = values[t]
    return adv
