"""Greedy evaluation with attention-concentration metrics."""
from __future__ import annotations

from dataclasses import replace
from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .envs import BALL_VALUE, DISTRACTOR_VALUE, PADDLE_VALUE, EnvConfig, env_seeds, make_env
from .model import Model
from .viz import upsample_blocks

# distractor count used by the transfer-probe variant
DISTRACTOR_VARIANT = 2


def cell_hits(pixels: np.ndarray, grid: tuple) -> np.ndarray:
    """Feature cells whose upsample block contains any flagged pixel.

    ``pixels`` is a boolean H x W map; the result is a boolean ``grid`` map.
    """
    fh, fw = grid
    h, w = pixels.shape
    rows = upsample_blocks(fh, h)
    cols = upsample_blocks(fw, w)
    row_any = np.stack([pixels[a:b].any(axis=0) for a, b in rows])
    return np.stack([row_any[:, a:b].any(axis=1) for a, b in cols], axis=1)


def object_pixels(obs: np.ndarray, value: float, frames: str = "all") -> np.ndarray:
    """Pixels showing ``value`` in the stacked observation (any channel, or just the newest)."""
    stack = obs[-1:] if frames == "latest" else obs
    return np.isclose(stack, value).any(axis=0)


def step_metrics(obs: np.ndarray, mask: np.ndarray, frames: str = "all") -> Dict[str, float]:
    """Mask weight on ball+paddle cells and on distractor-only cells for one observation."""
    grid = mask.shape
    target = cell_hits(object_pixels(obs, BALL_VALUE, frames) | object_pixels(obs, PADDLE_VALUE, frames), grid)
    distract = cell_hits(object_pixels(obs, DISTRACTOR_VALUE, frames), grid) & ~target
    return {
        "concentration": float(mask[target].sum()),
        "distractor_share": float(mask[distract].sum()),
        "uniform_baseline": float(target.mean()),
        "uniform_distractor": float(distract.mean()),
    }


def greedy_actions(model: Model, obs: np.ndarray):
    with T.no_grad():
        out = model(obs)
    scores = out.q if out.q is not None else out.logits
    return scores.data.argmax(axis=1), out.mask.data


def evaluate(
    model: Model,
    env_cfg: EnvConfig,
    episodes: int = 100,
    seed: int = 12345,
    frameskip: int = 1,
    framestack: int = 4,
    frames: str = "all",
    distractors: Optional[int] = None,
) -> Dict[str, float]:
    """Run greedy episodes and average per-step attention metrics over all steps."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if distractors is not None:
        env_cfg = replace(env_cfg, distractors=distractors)
    returns = []
    totals: Dict[str, float] = {}
    steps = 0
    for ep_seed in env_seeds(seed, episodes):
        env = make_env(env_cfg, frameskip, framestack, seed=ep_seed)
        obs, done, ret = env.reset(), False, 0.0
        while not done:
            actions, masks = greedy_actions(model, obs[None])
            for key, val in step_metrics(obs, masks[0], frames).items():
                totals[key] = totals.get(key, 0.0) + val
            steps += 1
            obs, reward, done = env.step(int(actions[0]))
            ret += reward
        returns.append(ret)
    report = {key: val / steps for key, val in totals.items()}
    report.update(episodes=episodes, steps=steps, mean_return=float(np.mean(returns)))
    return report
