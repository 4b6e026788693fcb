"""Synchronous advantage actor-critic update with GAE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .. import tensor as T
from ..model import Model
from ..optim import Adam, grad_clip_norm
from .hyper import Hyperparams
from .targets import gae_batch


@dataclass
class Rollout:
    """``T`` steps from ``K`` environments; ``values`` are the critic's estimates at collection."""

    obs: np.ndarray  # T x K x C x H x W
    actions: np.ndarray  # T x K
    rewards: np.ndarray  # T x K
    dones: np.ndarray  # T x K, 1.0 where the step ended an episode
    values: np.ndarray  # T x K
    last_value: np.ndarray  # K, bootstrap value after the final step


def policy_entropy(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return -(np.exp(logp) * logp).sum(axis=-1)


def a2c_losses(rollout: Rollout, model: Model, hp: Hyperparams):
    """Build the graph and return (total loss tensor, component floats)."""
    adv = gae_batch(rollout.rewards, rollout.values, rollout.dones, rollout.last_value, hp.gamma, hp.gae_lambda)
    returns = adv + rollout.values
    steps, k = rollout.actions.shape
    obs = rollout.obs.reshape((steps * k,) + rollout.obs.shape[2:])
    out = model(obs)
    logp = T.log_softmax(out.logits)
    chosen = T.gather(logp, rollout.actions.reshape(-1))
    policy_loss = -(chosen * adv.reshape(-1)).mean()
    diff = out.value - returns.reshape(-1)
    value_loss = (diff * diff).mean()
    probs = T.exp(logp)
    entropy = -(probs * logp).sum(axis=-1).mean()
    total = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy
    parts = {
        "policy_loss": policy_loss.item(),
        "value_loss": value_loss.item(),
        "entropy": entropy.item(),
        "loss": total.item(),
    }
    return total, parts


def a2c_update(rollout: Rollout, model: Model, optimizer: Adam, hp: Hyperparams) -> Dict[str, float]:
    total, parts = a2c_losses(rollout, model, hp)
    optimizer.zero_grad()
    T.backward(total)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in optimizer.params]
    optimizer.step(grad_clip_norm(grads, hp.grad_clip))
    return parts
