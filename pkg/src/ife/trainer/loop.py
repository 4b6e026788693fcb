"""Seeded end-to-end training on Catch for the value and actor-critic regimes."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .. import checkpoint
from .. import tensor as T
from ..envs import NUM_ACTIONS, EnvConfig, env_seeds, make_env
from ..model import Model, ModelConfig
from ..optim import Adam
from .a2c import Rollout, a2c_update
from .dqn import dqn_update, target_sync
from .hyper import REGIMES, Hyperparams, preset
from .replay import NStepAccumulator, ReplayBuffer
from .targets import epsilon

STATS_COLUMNS = ("frame", "episode", "return", "loss", "epsilon", "attention_entropy")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "dqn"
    profile: str = "desk"
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    hp: Hyperparams = field(default_factory=preset)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")


def fit_model_config(model: ModelConfig, env: EnvConfig, hp: Hyperparams, regime: str) -> ModelConfig:
    """Align input shape, action count and head type with the environment and regime."""
    h, w = env.frame_shape
    return replace(
        model,
        in_channels=hp.framestack,
        height=h,
        width=w,
        num_actions=NUM_ACTIONS,
        head="dueling" if regime == "dqn" else "actor_critic",
    )


def make_train_config(
    regime: str = "dqn",
    profile: str = "desk",
    seed: int = 0,
    env: Optional[EnvConfig] = None,
    model: Optional[ModelConfig] = None,
    **hp_overrides,
) -> TrainConfig:
    hp = replace(preset(regime, profile), **hp_overrides)
    env = env or EnvConfig()
    model = fit_model_config(model or ModelConfig(), env, hp, regime)
    return TrainConfig(regime=regime, profile=profile, seed=seed, env=env, hp=hp, model=model)


@dataclass
class TrainResult:
    stats: List[dict]
    model: Model
    frames: int
    checkpoint_path: Optional[Path] = None

    def returns(self) -> List[float]:
        return [row["return"] for row in self.stats]

    def final_mean_return(self, last: int = 100) -> float:
        rets = self.returns()[-last:]
        return float(np.mean(rets)) if rets else float("nan")


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


class _StatsSink:
    def __init__(self, path: Optional[Path]):
        self.rows: List[dict] = []
        self._fh = open(path, "w", newline="") if path else None
        if self._fh:
            self._fh.write(",".join(STATS_COLUMNS) + "\n")

    def add(self, row: dict) -> None:
        self.rows.append(row)
        if self._fh:
            self._fh.write(",".join(_fmt(row[c]) for c in STATS_COLUMNS) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()


def _mask_entropy(mask: np.ndarray) -> np.ndarray:
    flat = mask.reshape(mask.shape[0], -1)
    safe = np.where(flat > 0, flat, 1.0)
    return -(flat * np.log(safe)).sum(axis=1)


def _checkpoint_meta(cfg: TrainConfig, frames: int) -> dict:
    return {
        "regime": cfg.regime,
        "profile": cfg.profile,
        "seed": cfg.seed,
        "frames": frames,
        "env": {
            "grid_w": cfg.env.grid_w,
            "grid_h": cfg.env.grid_h,
            "cell_px": cfg.env.cell_px,
            "distractors": cfg.env.distractors,
        },
        "frameskip": cfg.hp.frameskip,
        "framestack": cfg.hp.framestack,
    }


def _save(cfg: TrainConfig, model: Model, path: Path, frames: int) -> Path:
    checkpoint.save(path, model.cfg, model.params, _checkpoint_meta(cfg, frames))
    return path


def _diverged(out_dir: Optional[Path], frame: int, detail: dict) -> None:
    if out_dir is not None:
        (out_dir / "diverged.json").write_text(json.dumps({"frame": frame, **detail}, indent=2, sort_keys=True))
    raise TrainingDiverged(f"non-finite loss at frame {frame}: {detail}")


def train(
    cfg: TrainConfig,
    out_dir=None,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Run ``cfg.regime`` for ``cfg.hp.total_frames`` base environment frames.

    Writes ``stats.csv`` and ``checkpoint.ife`` (plus periodic
    ``checkpoint_<frame>.ife``) into ``out_dir`` when given.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    sink = _StatsSink(out / "stats.csv" if out else None)
    try:
        runner = _train_dqn if cfg.regime == "dqn" else _train_a2c
        model, frames = runner(cfg, sink, out, progress)
    finally:
        sink.close()
    ckpt = _save(cfg, model, out / "checkpoint.ife", frames) if out else None
    return TrainResult(sink.rows, model, frames, ckpt)


class _Hooks:
    """Per-frame bookkeeping shared by both regimes."""

    def __init__(self, cfg: TrainConfig, out: Optional[Path], progress, model: Model, sink: _StatsSink):
        self.cfg, self.out, self.progress, self.model, self.sink = cfg, out, progress, model, sink

    def frame(self, f: int) -> None:
        if self.progress and f % 1000 == 0:
            rows = self.sink.rows[-100:]
            mean = np.mean([r["return"] for r in rows]) if rows else float("nan")
            last_loss = rows[-1]["loss"] if rows else float("nan")
            self.progress(
                f"frame {f} episodes {len(self.sink.rows)} mean_return_100 {mean:.3f} loss {last_loss:.4f}"
            )
        every = self.cfg.hp.checkpoint_every
        if self.out is not None and every and f % every == 0:
            _save(self.cfg, self.model, self.out / f"checkpoint_{f}.ife", f)


def _seeds(seed: int):
    init, envs, actions, replay = np.random.SeedSequence(seed).spawn(4)
    return (
        int(init.generate_state(1)[0]),
        int(envs.generate_state(1)[0]),
        np.random.default_rng(actions),
        int(replay.generate_state(1)[0]),
    )


def _train_dqn(cfg: TrainConfig, sink: _StatsSink, out, progress):
    hp = cfg.hp
    init_seed, env_seed, act_rng, replay_seed = _seeds(cfg.seed)
    envs = [make_env(cfg.env, hp.frameskip, hp.framestack, seed=s) for s in env_seeds(env_seed, hp.num_envs)]
    online = Model(cfg.model, seed=init_seed)
    target = Model(cfg.model, params=online.params.copy())
    opt = Adam(online.parameters(), lr=hp.lr, eps=hp.adam_epsilon, amsgrad=hp.amsgrad)
    replay = ReplayBuffer(hp.replay_capacity, envs[0].observation_shape, seed=replay_seed)
    accs = [NStepAccumulator(hp.n_step, hp.gamma) for _ in envs]
    hooks = _Hooks(cfg, out, progress, online, sink)

    obs = np.stack([e.reset() for e in envs])
    ep_return = np.zeros(len(envs))
    ep_entropy = np.zeros(len(envs))
    ep_steps = np.zeros(len(envs))
    frame, loss = 0, float("nan")
    while frame < hp.total_frames:
        eps = epsilon(frame, hp)
        with T.no_grad():
            res = online(obs)
        ent = _mask_entropy(res.mask.data)
        greedy = res.q.data.argmax(axis=1)
        explore = act_rng.random(len(envs)) < eps
        random_actions = act_rng.integers(NUM_ACTIONS, size=len(envs))
        actions = np.where(explore, random_actions, greedy)
        next_obs = np.empty_like(obs)
        start = frame
        for i, env in enumerate(envs):
            before = env.frames
            nxt, reward, done = env.step(int(actions[i]))
            frame += env.frames - before
            ep_return[i] += reward
            ep_entropy[i] += ent[i]
            ep_steps[i] += 1
            for sample in accs[i].push(obs[i], int(actions[i]), reward, nxt, done):
                replay.add(sample)
            if done:
                sink.add(
                    {
                        "frame": frame,
                        "episode": len(sink.rows) + 1,
                        "return": float(ep_return[i]),
                        "loss": float(loss),
                        "epsilon": float(eps),
                        "attention_entropy": float(ep_entropy[i] / ep_steps[i]),
                    }
                )
                ep_return[i] = ep_entropy[i] = ep_steps[i] = 0.0
                nxt = env.reset()
            next_obs[i] = nxt
        obs = next_obs
        for f in range(start + 1, frame + 1):
            target_sync(online, target, f, hp)
            if f % hp.train_every == 0 and len(replay) >= max(hp.learning_starts, hp.batch_size):
                loss = dqn_update(replay.sample(hp.batch_size), online, target, opt, hp)
                if not math.isfinite(loss):
                    _diverged(out, f, {"loss": loss, "regime": "dqn"})
            hooks.frame(f)
    return online, frame


def _sample_actions(rng: np.random.Generator, logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(len(p))
    return np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), p.shape[1] - 1)


def _train_a2c(cfg: TrainConfig, sink: _StatsSink, out, progress):
    hp = cfg.hp
    init_seed, env_seed, act_rng, _ = _seeds(cfg.seed)
    envs = [make_env(cfg.env, hp.frameskip, hp.framestack, seed=s) for s in env_seeds(env_seed, hp.num_envs)]
    model = Model(cfg.model, seed=init_seed)
    opt = Adam(model.parameters(), lr=hp.lr, eps=hp.adam_epsilon, amsgrad=hp.amsgrad)
    hooks = _Hooks(cfg, out, progress, model, sink)
    k = len(envs)
    obs = np.stack([e.reset() for e in envs])
    ep_return = np.zeros(k)
    ep_entropy = np.zeros(k)
    ep_steps = np.zeros(k)
    frame, loss = 0, float("nan")
    while frame < hp.total_frames:
        start = frame
        buf_obs, buf_act, buf_rew, buf_done, buf_val = [], [], [], [], []
        for _ in range(hp.n_step):
            with T.no_grad():
                res = model(obs)
            ent = _mask_entropy(res.mask.data)
            actions = _sample_actions(act_rng, res.logits.data)
            buf_obs.append(obs)
            buf_act.append(actions)
            buf_val.append(res.value.data.copy())
            rewards = np.zeros(k)
            dones = np.zeros(k)
            next_obs = np.empty_like(obs)
            for i, env in enumerate(envs):
                before = env.frames
                nxt, reward, done = env.step(int(actions[i]))
                frame += env.frames - before
                rewards[i], dones[i] = reward, float(done)
                ep_return[i] += reward
                ep_entropy[i] += ent[i]
                ep_steps[i] += 1
                if done:
                    sink.add(
                        {
                            "frame": frame,
                            "episode": len(sink.rows) + 1,
                            "return": float(ep_return[i]),
                            "loss": float(loss),
                            "epsilon": 0.0,
                            "attention_entropy": float(ep_entropy[i] / ep_steps[i]),
                        }
                    )
                    ep_return[i] = ep_entropy[i] = ep_steps[i] = 0.0
                    nxt = env.reset()
                next_obs[i] = nxt
            buf_rew.append(rewards)
            buf_done.append(dones)
            obs = next_obs
        with T.no_grad():
            last_value = model(obs).value.data.copy()
        rollout = Rollout(
            np.stack(buf_obs),
            np.stack(buf_act),
            np.stack(buf_rew),
            np.stack(buf_done),
            np.stack(buf_val),
            last_value,
        )
        parts = a2c_update(rollout, model, opt, hp)
        loss = parts["loss"]
        if not math.isfinite(loss):
            _diverged(out, frame, {"regime": "a2c", **parts})
        for f in range(start + 1, frame + 1):
            hooks.frame(f)
    return model, frame
