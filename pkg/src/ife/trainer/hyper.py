"""Training hyperparameters with full-scale and desk-scale presets."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

REGIMES = ("dqn", "a2c")
PROFILES = ("desk", "paper")


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.99
    n_step: int = 3
    lr: float = 0.00025
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_decay_frames: int = 50_000
    target_update_frames: int = 2_000
    batch_size: int = 32
    adam_eps: Optional[float] = None  # None -> 0.005 / batch_size
    amsgrad: bool = False
    grad_clip: float = 10.0
    gae_lambda: float = 0.92
    total_frames: int = 200_000
    replay_capacity: int = 20_000
    learning_starts: int = 2_000
    train_every: int = 16
    num_envs: int = 8
    frameskip: int = 1
    framestack: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    checkpoint_every: int = 0  # frames; 0 keeps only the final checkpoint

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end must not exceed eps_start")
        if self.n_step < 1:
            raise ValueError(f"n_step must be >= 1, got {self.n_step}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.num_envs < 1 or self.train_every < 1:
            raise ValueError("batch_size, num_envs and train_every must be >= 1")

    @property
    def adam_epsilon(self) -> float:
        return self.adam_eps if self.adam_eps is not None else 0.005 / self.batch_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def preset(regime: str = "dqn", profile: str = "desk") -> Hyperparams:
    """Hyperparameters for a regime: ``paper`` holds the full-scale values, ``desk`` shrinks them."""
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}, got {profile!r}")
    if regime == "dqn":
        hp = Hyperparams(train_every=8)
        if profile == "paper":
            hp = replace(
                hp,
                eps_decay_frames=1_000_000,
                target_update_frames=32_000,
                batch_size=256,
                frameskip=4,
                framestack=4,
                total_frames=50_000_000,
                replay_capacity=1_000_000,
                learning_starts=80_000,
                train_every=4,
                num_envs=1,
            )
        return hp
    hp = Hyperparams(
        n_step=20,
        lr=0.0001,
        adam_eps=1e-8,
        amsgrad=True,
        framestack=1,
        total_frames=300_000,
        num_envs=8,
    )
    if profile == "paper":
        return replace(hp, frameskip=4, total_frames=50_000_000)
    # fewer envs per update buys 4x more updates in the same frame budget
    return replace(hp, lr=0.0005, num_envs=2)
