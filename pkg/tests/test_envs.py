import csv

import numpy as np
import pytest

from ife.envs import (
    BALL_VALUE,
    DISTRACTOR_VALUE,
    LEFT,
    PADDLE_VALUE,
    RIGHT,
    STAY,
    Catch,
    CatchState,
    EnvConfig,
    EpisodeOver,
    greedy_action,
    make_env,
    render,
    wrap,
    write_trajectory_csv,
)

# upper 1% point of the chi-square distribution with 9 degrees of freedom
CHI2_99_DF9 = 21.666


def rollout(env, policy):
    obs = env.reset()
    frames, rewards, done = [obs], [], False
    while not done:
        obs, r, done = env.step(policy(env))
        frames.append(obs)
        rewards.append(r)
    return frames, rewards


def test_reset_deterministic_and_in_range():
    a = Catch(EnvConfig(seed=42)).reset()
    b = Catch(EnvConfig(seed=42)).reset()
    assert a.tobytes() == b.tobytes()
    assert a.shape == (40, 40) and a.min() >= 0.0 and a.max() <= 1.0
    env = Catch()
    assert env.reset(seed=7).tobytes() == Catch().reset(seed=7).tobytes()


def test_initial_layout():
    env = Catch(EnvConfig(seed=3))
    env.reset()
    assert env.state.ball[0] == 0
    assert env.state.paddle == 5


def test_ball_column_uniform_over_seeds():
    counts = np.zeros(10)
    for seed in range(10_000):
        env = Catch(EnvConfig(seed=seed))
        env.reset()
        counts[env.state.ball[1]] += 1
    expected = 10_000 / 10
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < CHI2_99_DF9


def test_step_rules():
    env = Catch(EnvConfig(seed=0))
    env.reset()
    env.state.ball = (0, 5)
    for _ in range(8):
        _, r, done = env.step(STAY)
        assert r == 0.0 and not done
    _, r, done = env.step(STAY)
    assert (r, done) == (1.0, True)
    with pytest.raises(EpisodeOver):
        env.step(STAY)
    env.reset()
    env.state.ball = (0, 5)
    for _ in range(9):
        _, r, done = env.step(RIGHT)
    assert env.state.paddle == 9 and (r, done) == (-1.0, True)


def test_paddle_clamped():
    env = Catch(EnvConfig(seed=0))
    env.reset()
    for _ in range(9):
        env.step(LEFT)
    assert env.state.paddle == 0
    env.reset()
    with pytest.raises(ValueError):
        env.step(3)


@pytest.mark.parametrize("distractors", [0, 2])
def test_greedy_policy_catches_from_every_column(distractors):
    for col in range(10):
        env = Catch(EnvConfig(seed=col, distractors=distractors))
        env.reset()
        env.state.ball = (0, col)
        total, done = 0.0, False
        while not done:
            _, r, done = env.step(greedy_action(env.state))
            total += r
        assert total == 1.0


def test_random_policy_expected_return():
    # catch probability is exactly 1/grid_w, so the mean return is 2/10 - 1
    rng = np.random.default_rng(0)
    env = Catch(EnvConfig(seed=0))
    returns = []
    for _ in range(10_000):
        _, rewards = rollout(env, lambda e: int(rng.integers(3)))
        returns.append(sum(rewards))
    assert set(returns) <= {-1.0, 1.0}
    assert abs(np.mean(returns) - (2 / 10 - 1)) <= 0.05


def test_render_contract():
    cfg = EnvConfig()
    assert not render(CatchState(), cfg).any()
    frame = render(CatchState(ball=(3, 4), paddle=2), cfg)
    assert (frame == BALL_VALUE).sum() == 16
    assert (frame == PADDLE_VALUE).sum() == 16
    assert (frame[12:16, 16:20] == BALL_VALUE).all()
    assert (frame[36:40, 8:12] == PADDLE_VALUE).all()
    small = render(CatchState(ball=(0, 0)), EnvConfig(grid_w=5, grid_h=6, cell_px=2))
    assert small.shape == (12, 10)


def test_distractor_variant_differs_only_in_distractor_cells():
    plain = Catch(EnvConfig(seed=11))
    noisy = Catch(EnvConfig(seed=11, distractors=2))
    a, b = plain.reset(), noisy.reset()
    for step in range(10):
        cells = {tuple(d) for d in noisy.state.distractors}
        diff = np.argwhere(a != b)
        for y, x in diff:
            assert (y // 4, x // 4) in cells
        assert np.isclose(b, DISTRACTOR_VALUE).any() or all(
            c in {noisy.state.ball, (9, noisy.state.paddle)} for c in cells
        )
        if plain.state.terminal:
            break
        action = greedy_action(plain.state)
        a, _, _ = plain.step(action)
        b, _, _ = noisy.step(action)


def test_distractors_never_reach_paddle_row():
    env = Catch(EnvConfig(seed=5, distractors=3))
    for _ in range(20):
        env.reset()
        while not env.state.terminal:
            assert all(r < 9 for r, _ in env.state.distractors)
            env.step(STAY)


def test_wrapper_identity_and_padding():
    cfg = EnvConfig(seed=9)
    raw = Catch(cfg)
    wrapped = wrap(Catch(cfg), frameskip=1, framestack=1)
    a = raw.reset()
    b = wrapped.reset()
    np.testing.assert_array_equal(a[None], b)
    for action in (LEFT, RIGHT, STAY, STAY):
        ra, rr, rd = raw.step(action)
        wa, wr, wd = wrapped.step(action)
        np.testing.assert_array_equal(ra[None], wa)
        assert (rr, rd) == (wr, wd)

    stacked = make_env(cfg, frameskip=1, framestack=4)
    obs = stacked.reset()
    assert obs.shape == (4, 40, 40) == stacked.observation_shape
    assert not obs[:3].any() and obs[3].any()


def test_framestack_shows_four_ball_rows():
    env = make_env(EnvConfig(seed=2), frameskip=1, framestack=4)
    env.reset()
    for _ in range(3):
        obs, _, _ = env.step(STAY)
    rows = {int(np.argwhere(ch == BALL_VALUE)[0][0]) // 4 for ch in obs}
    assert rows == {0, 1, 2, 3}
    np.testing.assert_array_equal(env.latest_frame, obs[-1])


def test_frameskip_repeats_and_sums():
    env = make_env(EnvConfig(seed=4), frameskip=4, framestack=1)
    env.reset()
    _, r, done = env.step(STAY)
    assert env.state.ball[0] == 4 and env.frames == 4 and r == 0.0
    env.step(STAY)
    _, r, done = env.step(STAY)  # lands mid-repeat
    assert done and env.frames == 9 and r in (-1.0, 1.0)
    with pytest.raises(ValueError):
        make_env(EnvConfig(), frameskip=0)


def test_full_determinism():
    actions = np.random.default_rng(1).integers(3, size=200)

    def trajectory():
        env = make_env(EnvConfig(seed=77, distractors=2), frameskip=1, framestack=4)
        out = [env.reset().tobytes()]
        for a in actions:
            obs, r, done = env.step(int(a))
            out.append((obs.tobytes(), r, done))
            if done:
                out.append(env.reset().tobytes())
        return out

    assert trajectory() == trajectory()


def test_trajectory_csv(tmp_path):
    path = tmp_path / "traj.csv"
    write_trajectory_csv([(0, 1, 0.0, False), (1, 2, 1.0, True)], path)
    rows = list(csv.reader(open(path)))
    assert rows == [["step", "action", "reward", "terminal"], ["0", "1", "0.0", "0"], ["1", "2", "1.0", "1"]]


def test_config_invariants():
    cfg = EnvConfig(grid_w=7, grid_h=5, cell_px=3)
    assert cfg.episode_len == 5
    assert Catch(cfg).reset().shape == (15, 21)
    with pytest.raises(ValueError):
        EnvConfig(distractors=-1)
