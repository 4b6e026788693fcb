"""Adam (with optional AMSGrad) and global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    v_max: List[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    amsgrad: bool = False,
) -> List[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays and advances ``state``."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        if amsgrad:
            state.v_max = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        v = state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        if amsgrad:
            v = state.v_max[i] = np.maximum(state.v_max[i], v)
        denom = np.sqrt(v / bc2) + eps
        out.append(p - lr * (m / bc1) / denom)
    return out


class Adam:
    """Stateful wrapper updating ``Tensor`` parameters in place from their ``.grad``."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        amsgrad: bool = False,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.amsgrad = amsgrad
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, grads: Optional[Sequence[np.ndarray]] = None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new = adam_step(
            [p.data for p in self.params],
            grads,
            self.state,
            self.lr,
            beta1=self.betas[0],
            beta2=self.betas[1],
            eps=self.eps,
            amsgrad=self.amsgrad,
        )
        for p, d in zip(self.params, new):
            p.data = d


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def grad_clip_norm(grads: Sequence[np.ndarray], max_norm: float = 10.0) -> List[np.ndarray]:
    """Scale all gradients by ``max_norm / norm`` when their global L2 norm exceeds ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return [np.asarray(g) for g in grads]
