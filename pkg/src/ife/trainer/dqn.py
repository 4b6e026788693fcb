"""n-step double-DQN update and hard target synchronisation."""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..model import Model
from ..optim import Adam, grad_clip_norm
from .hyper import Hyperparams
from .replay import Batch


def double_q_targets(batch: Batch, online: Model, target: Model) -> np.ndarray:
    """``R + discount * Q_target(s', argmax_a Q_online(s', a))``."""
    with T.no_grad():
        best = online(batch.next_obs).q.data.argmax(axis=1)
        q_next = target(batch.next_obs).q.data[np.arange(len(best)), best]
    return batch.returns + batch.discounts * q_next


def dqn_update(batch: Batch, online: Model, target: Model, optimizer: Adam, hp: Hyperparams) -> float:
    """One Huber-loss gradient step on ``online``; ``target`` is only read."""
    if len(batch.actions) == 0:
        raise ValueError("dqn_update needs a non-empty batch")
    targets = double_q_targets(batch, online, target)
    out = online(batch.obs)
    pred = T.gather(out.q, batch.actions)
    loss = T.huber_loss(pred, targets)
    optimizer.zero_grad()
    T.backward(loss)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in optimizer.params]
    optimizer.step(grad_clip_norm(grads, hp.grad_clip))
    return loss.item()


def target_sync(online: Model, target: Model, frame: int, hp: Hyperparams) -> bool:
    """Hard-copy online parameters into ``target`` when ``frame`` hits the sync period."""
    if frame % hp.target_update_frames == 0:
        target.params.load_from(online.params)
        return True
    return False
