"""Pixel-rendered Catch with an optional distractor variant, plus frame wrappers."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Tuple

import numpy as np

LEFT, STAY, RIGHT = 0, 1, 2
NUM_ACTIONS = 3

BALL_VALUE = 1.0
PADDLE_VALUE = 0.6
DISTRACTOR_VALUE = 0.8


class EpisodeOver(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    grid_w: int = 10
    grid_h: int = 10
    cell_px: int = 4
    distractors: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.grid_w < 1 or self.grid_h < 2 or self.cell_px < 1 or self.distractors < 0:
            raise ValueError(f"invalid env config {self}")

    @property
    def episode_len(self) -> int:
        """Observations per episode, counting the one returned by ``reset``."""
        return self.grid_h

    @property
    def frame_shape(self) -> Tuple[int, int]:
        return self.grid_h * self.cell_px, self.grid_w * self.cell_px


@dataclass
class CatchState:
    ball: Optional[Tuple[int, int]] = None  # (row, col)
    paddle: Optional[int] = None  # column on the bottom row
    distractors: List[Tuple[int, int]] = field(default_factory=list)
    terminal: bool = False


def render(state: CatchState, cfg: EnvConfig) -> np.ndarray:
    """Grayscale frame in [0, 1]; each grid cell is a ``cell_px`` square block."""
    grid = np.zeros((cfg.grid_h, cfg.grid_w))
    for r, c in state.distractors:
        grid[r, c] = DISTRACTOR_VALUE
    if state.paddle is not None:
        grid[cfg.grid_h - 1, state.paddle] = PADDLE_VALUE
    if state.ball is not None:
        grid[state.ball] = BALL_VALUE
    return np.kron(grid, np.ones((cfg.cell_px, cfg.cell_px)))


class Catch:
    """A ball falls one row per step; move the paddle under it before it lands.

    Ball columns and distractor positions come from separate seeded streams, so
    the plain and distractor variants share ball trajectories for equal seeds.
    """

    def __init__(self, cfg: EnvConfig = EnvConfig()):
        self.cfg = cfg
        self.state = CatchState()
        self._seed(cfg.seed)

    def _seed(self, seed: int) -> None:
        ball_seq, distractor_seq = np.random.SeedSequence(seed).spawn(2)
        self._ball_rng = np.random.default_rng(ball_seq)
        self._distractor_rng = np.random.default_rng(distractor_seq)

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self._seed(seed)
        cfg = self.cfg
        col = int(self._ball_rng.integers(cfg.grid_w))
        distractors = [self._spawn_distractor(anywhere=True) for _ in range(cfg.distractors)]
        self.state = CatchState(ball=(0, col), paddle=cfg.grid_w // 2, distractors=distractors)
        return self.render()

    def _spawn_distractor(self, anywhere: bool) -> Tuple[int, int]:
        row = int(self._distractor_rng.integers(self.cfg.grid_h - 1)) if anywhere else 0
        return row, int(self._distractor_rng.integers(self.cfg.grid_w))

    def step(self, action: int) -> Tuple[np.ndarray, float, bool]:
        st = self.state
        if st.terminal or st.ball is None:
            raise EpisodeOver("step() called on a finished episode; call reset()")
        if action not in (LEFT, STAY, RIGHT):
            raise ValueError(f"action must be 0 (left), 1 (stay) or 2 (right), got {action}")
        cfg = self.cfg
        st.paddle = min(max(st.paddle + action - 1, 0), cfg.grid_w - 1)
        row, col = st.ball
        st.ball = (row + 1, col)
        moved = []
        for r, c in st.distractors:
            moved.append((r + 1, c) if r + 1 < cfg.grid_h - 1 else self._spawn_distractor(anywhere=False))
        st.distractors = moved
        reward = 0.0
        if row + 1 == cfg.grid_h - 1:
            st.terminal = True
            reward = 1.0 if st.paddle == col else -1.0
        return self.render(), reward, st.terminal

    def render(self) -> np.ndarray:
        return render(self.state, self.cfg)


class FrameWrapper:
    """Action repeat (rewards summed, last frame kept) and channel-wise frame stacking."""

    def __init__(self, env: Catch, frameskip: int = 4, framestack: int = 4):
        if frameskip < 1 or framestack < 1:
            raise ValueError("frameskip and framestack must be >= 1")
        self.env = env
        self.frameskip = frameskip
        self.framestack = framestack
        h, w = env.cfg.frame_shape
        self._stack = np.zeros((framestack, h, w))
        self.frames = 0  # base environment steps taken

    @property
    def cfg(self) -> EnvConfig:
        return self.env.cfg

    @property
    def state(self) -> CatchState:
        return self.env.state

    @property
    def observation_shape(self) -> Tuple[int, int, int]:
        return self._stack.shape

    def _push(self, frame: np.ndarray) -> np.ndarray:
        self._stack = np.concatenate([self._stack[1:], frame[None]], axis=0)
        return self._stack.copy()

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        frame = self.env.reset(seed)
        self._stack = np.zeros_like(self._stack)
        return self._push(frame)

    def step(self, action: int) -> Tuple[np.ndarray, float, bool]:
        total = 0.0
        frame, terminal = None, False
        for _ in range(self.frameskip):
            frame, reward, terminal = self.env.step(action)
            self.frames += 1
            total += reward
            if terminal:
                break
        return self._push(frame), total, terminal

    @property
    def latest_frame(self) -> np.ndarray:
        return self._stack[-1]


def wrap(env: Catch, frameskip: int = 4, framestack: int = 4) -> FrameWrapper:
    return FrameWrapper(env, frameskip=frameskip, framestack=framestack)


def make_env(cfg: EnvConfig, frameskip: int = 1, framestack: int = 1, seed: Optional[int] = None) -> FrameWrapper:
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return wrap(Catch(cfg), frameskip=frameskip, framestack=framestack)


def env_seeds(seed: int, count: int) -> List[int]:
    """Independent per-instance seeds derived from one run seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def greedy_action(state: CatchState) -> int:
    """Move the paddle toward the ball column."""
    if state.ball is None or state.paddle is None:
        return STAY
    diff = state.ball[1] - state.paddle
    return STAY if diff == 0 else (RIGHT if diff > 0 else LEFT)


def write_trajectory_csv(rows: Iterable[Tuple[int, int, float, bool]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "action", "reward", "terminal"])
        for step, action, reward, terminal in rows:
            writer.writerow([step, action, reward, int(terminal)])
