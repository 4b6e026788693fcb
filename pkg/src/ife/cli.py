"""Command-line entry point: train, eval, visualize, audit, compare."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import checkpoint
from .envs import EnvConfig, env_seeds, make_env
from .evaluate import DISTRACTOR_VARIANT, evaluate, greedy_actions
from .geometry import ConvStackSpec, GeometryError, audit_report
from .model import AfeConfig, HueConfig, Model, ModelConfig
from .trainer import Hyperparams, make_train_config, train
from .trainer.hyper import PROFILES, REGIMES
from .viz import OverlayConfig, mask_overlay, side_by_side, write_ppm


class ConfigError(ValueError):
    pass


_ENV_KEYS = ("grid_w", "grid_h", "cell_px", "distractors")
_MODEL_KEYS = ("arch", "head_hidden")
_TOP_KEYS = ("regime", "profile", "seed")


def _allowed_keys() -> List[str]:
    keys = list(_TOP_KEYS)
    keys += [f"hp.{f.name}" for f in fields(Hyperparams)]
    keys += [f"env.{k}" for k in _ENV_KEYS]
    keys += [f"model.{k}" for k in _MODEL_KEYS]
    keys += [f"model.hue.{f.name}" for f in fields(HueConfig)]
    keys += [f"model.afe.{f.name}" for f in fields(AfeConfig)]
    return keys


def load_config(path) -> Dict[str, object]:
    """Flat dotted-key JSON object; unknown keys are rejected."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object of dotted keys")
    unknown = sorted(set(data) - set(_allowed_keys()))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return data


def build_train_config(flat: Dict[str, object]):
    regime = flat.get("regime", "dqn")
    profile = flat.get("profile", "desk")
    if regime not in REGIMES or profile not in PROFILES:
        raise ConfigError(f"regime must be one of {REGIMES} and profile one of {PROFILES}")
    seed = flat.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    hp = {k[3:]: v for k, v in flat.items() if k.startswith("hp.")}
    env = {k[4:]: v for k, v in flat.items() if k.startswith("env.")}
    hue = {k[10:]: v for k, v in flat.items() if k.startswith("model.hue.")}
    afe = {k[10:]: v for k, v in flat.items() if k.startswith("model.afe.")}
    top = {k[6:]: v for k, v in flat.items() if k.startswith("model.") and k.count(".") == 1}
    try:
        model = ModelConfig(
            hue=replace(HueConfig(), **hue), afe=replace(AfeConfig(), **afe), **top
        ) if (hue or afe or top) else None
        return make_train_config(regime, profile, seed, env=EnvConfig(**env), model=model, **hp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _load_checkpoint(path):
    cfg, params, meta = checkpoint.load(path)
    return Model(cfg, params=params), meta


def _env_from_meta(model: Model, meta: dict) -> EnvConfig:
    env = meta.get("env")
    if env:
        return EnvConfig(**env)
    return EnvConfig(grid_w=model.cfg.width // 4, grid_h=model.cfg.height // 4, cell_px=4)


def _wrapper_args(model: Model, meta: dict):
    return meta.get("frameskip", 1), meta.get("framestack", model.cfg.in_channels)


def cmd_train(args) -> int:
    flat = load_config(args.config) if args.config else {}
    for key in _TOP_KEYS:
        if getattr(args, key) is not None:
            flat[key] = getattr(args, key)
    cfg = build_train_config(flat)
    result = train(cfg, out_dir=args.out, progress=lambda line: print(line, flush=True))
    print(
        json.dumps(
            {
                "frames": result.frames,
                "episodes": len(result.stats),
                "final_mean_return_100": result.final_mean_return(100),
                "checkpoint": str(result.checkpoint_path),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_eval(args) -> int:
    model, meta = _load_checkpoint(args.checkpoint)
    env = _env_from_meta(model, meta)
    frameskip, framestack = _wrapper_args(model, meta)
    distractors = DISTRACTOR_VARIANT if args.env == "distractor" else 0
    report = evaluate(
        model, env, args.episodes, seed=args.seed, frameskip=frameskip, framestack=framestack,
        distractors=distractors,
    )
    report["env"] = args.env
    print(json.dumps(report, sort_keys=True))
    return 0


def _overlay_cfg(args) -> OverlayConfig:
    return OverlayConfig(darken=args.darken, normalization=args.normalization, colormap=args.colormap)


def _episodes(model: Model, env_cfg: EnvConfig, meta: dict, episodes: int, seed: int):
    """Yield (episode, step, observation, mask) along greedy rollouts of ``model``."""
    frameskip, framestack = _wrapper_args(model, meta)
    for ep, ep_seed in enumerate(env_seeds(seed, episodes)):
        env = make_env(env_cfg, frameskip, framestack, seed=ep_seed)
        obs, done, step = env.reset(), False, 0
        while True:
            actions, masks = greedy_actions(model, obs[None])
            yield ep, step, obs, masks[0]
            if done:
                break
            obs, _, done = env.step(int(actions[0]))
            step += 1


def cmd_visualize(args) -> int:
    model, meta = _load_checkpoint(args.checkpoint)
    env = _env_from_meta(model, meta)
    if args.env == "distractor":
        env = replace(env, distractors=DISTRACTOR_VARIANT)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ocfg = _overlay_cfg(args)
    count = 0
    for ep, step, obs, mask in _episodes(model, env, meta, args.episodes, args.seed):
        write_ppm(mask_overlay(obs[-1], mask, ocfg), out / f"ep{ep:03d}_step{step:03d}.ppm")
        count += 1
    print(json.dumps({"frames": count, "out": str(out)}, sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    model_a, meta_a = _load_checkpoint(args.checkpoint_a)
    model_b, _ = _load_checkpoint(args.checkpoint_b)
    if model_a.cfg.in_channels != model_b.cfg.in_channels or (
        (model_a.cfg.height, model_a.cfg.width) != (model_b.cfg.height, model_b.cfg.width)
    ):
        raise ConfigError("checkpoints expect different observation shapes")
    env = _env_from_meta(model_a, meta_a)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ocfg = _overlay_cfg(args)
    count = 0
    for ep, step, obs, mask_a in _episodes(model_a, env, meta_a, args.episodes, args.seed):
        _, masks_b = greedy_actions(model_b, obs[None])
        frame = obs[-1]
        img = side_by_side(mask_overlay(frame, mask_a, ocfg), mask_overlay(frame, masks_b[0], ocfg))
        write_ppm(img, out / f"ep{ep:03d}_step{step:03d}.ppm")
        count += 1
    print(json.dumps({"frames": count, "out": str(out)}, sort_keys=True))
    return 0


def cmd_audit(args) -> int:
    spec = ConvStackSpec.parse(args.stack, args.input)
    print(json.dumps(audit_report(spec), sort_keys=True))
    return 0


def _add_overlay_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--darken", type=float, default=0.25)
    p.add_argument("--normalization", choices=("max", "sum"), default="max")
    p.add_argument("--colormap", choices=("grayscale", "heat"), default="grayscale")
    p.add_argument("--seed", type=int, default=12345, help="evaluation seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ife", description="Interpretable feature extractor toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent on Catch")
    p.add_argument("--config", help="JSON file of flat dotted keys")
    p.add_argument("--profile", choices=PROFILES)
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation with attention metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--env", choices=("plain", "distractor"), default="plain")
    p.add_argument("--seed", type=int, default=12345)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("visualize", help="write attention overlays as PPM frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--env", choices=("plain", "distractor"), default="plain")
    _add_overlay_flags(p)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("audit", help="displacement report for a conv stack")
    p.add_argument("--stack", required=True, help='layers as "k1xs1,k2xs2,..."')
    p.add_argument("--input", required=True, help="input size WxH")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("compare", help="side-by-side overlays of two checkpoints")
    p.add_argument("--checkpoint-a", required=True)
    p.add_argument("--checkpoint-b", required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_overlay_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "episodes", 1) is not None and getattr(args, "episodes", 1) < 1:
        parser.print_usage(sys.stderr)
        print("error: --episodes must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, GeometryError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
