"""Command-line interface.

Subcommands: train, eval, analyze, play, dump-world, describe. Settings
come from a flat key=value config file (--config); the flags --seed,
--mode, --out, --rounds, --freeze, and --multi-task override file keys,
and file keys override built-in defaults. Exit codes: 0 success, 2 bad
flags or config, 1 runtime failure with a one-line diagnostic.
"""

from __future__ import annotations

import argparse
import json
import sys

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, parse_assignments
from .experiment import (
    configure_logging,
    run_analyze,
    run_eval,
    train_from_config,
)
from .play import play
from .world import World, write_world_csv


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edl",
        description="Train, evaluate, analyze, and play the two-agent "
                    "image-guessing game.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, checkpoint_help):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--rounds", type=int, help="dialog rounds")
        p.add_argument("--checkpoint", help=checkpoint_help)

    p_train = sub.add_parser("train", help="run a training session")
    add_common(p_train, "resume from this checkpoint")
    p_train.add_argument("--mode", choices=["tabular", "neural"],
                         help="override the config mode")
    p_train.add_argument("--freeze", choices=["q", "a", "f"],
                         action="append", default=None,
                         help="freeze the questioner, answerer, or "
                              "regression head during the policy-gradient "
                              "phase (repeatable)")
    p_train.add_argument("--multi-task", action="store_true", default=None,
                         help="mix the supervised loss into the "
                              "policy-gradient phase")

    p_eval = sub.add_parser("eval", help="accuracy, retrieval curve, and "
                                         "ranking metrics for a checkpoint")
    add_common(p_eval, "checkpoint to evaluate (required)")

    p_an = sub.add_parser("analyze", help="protocol-grounding report for a "
                                          "checkpoint")
    add_common(p_an, "checkpoint to analyze (required)")

    p_play = sub.add_parser("play", help="play one episode against a "
                                         "checkpointed partner")
    add_common(p_play, "trained partner checkpoint (required)")
    p_play.add_argument("--side", choices=["q", "a"],
                        help="your seat: q asks and guesses, a answers "
                             "(required)")

    p_dump = sub.add_parser("dump-world", help="write images.csv and "
                                               "instances.csv")
    add_common(p_dump, "unused")

    p_desc = sub.add_parser("describe", help="describe the world, a config, "
                                             "or a checkpoint")
    add_common(p_desc, "checkpoint to describe")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    overrides: dict[str, str] = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = args.mode
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.rounds is not None:
        overrides["rounds"] = str(args.rounds)
    for side in getattr(args, "freeze", None) or []:
        overrides[f"freeze_{side}"] = "true"
    if getattr(args, "multi_task", None):
        overrides["multi_task"] = "true"
    if overrides:
        cfg = parse_assignments(overrides, cfg)
    return cfg


def _describe(args) -> int:
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        print(f"checkpoint: {args.checkpoint}")
        print(f"mode: {ckpt.mode}")
        step_unit = "iterations" if ckpt.mode == "tabular" else "epochs"
        print(f"trained {step_unit}: {ckpt.step}")
        n_floats = sum(a.size for a in ckpt.arrays.values())
        print(f"arrays: {len(ckpt.arrays)} ({n_floats} float64 values)")
        print("config snapshot:")
        for key, value in sorted(ckpt.config.items()):
            print(f"  {key} = {value}")
        return 0
    cfg = _config_from_args(args).resolved()
    world = World(cfg.n_attributes, cfg.n_values)
    print(f"world: {world.n_attributes} attributes x {world.n_values} "
          f"values = {world.n_global_values} global values")
    print(f"images: {world.n_images}  tasks: {world.n_tasks}  "
          f"instances: {len(world.enumerate_instances())}  "
          f"prediction pairs: {world.n_pairs}")
    for k in range(world.n_attributes):
        labels = ", ".join(world.value_label(k, v)
                           for v in range(world.n_values))
        print(f"  {world.attribute_name(k)}: {labels}")
    print("resolved config:")
    for line in cfg.to_text().splitlines():
        print(f"  {line}")
    return 0


def _usage_error(parser: argparse.ArgumentParser, message: str) -> int:
    print(parser.format_usage(), end="", file=sys.stderr)
    print(f"edl: error: {message}", file=sys.stderr)
    return 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command in ("eval", "analyze", "play") and not args.checkpoint:
        return _usage_error(parser, f"{args.command} requires --checkpoint")
    if args.command == "play" and not args.side:
        return _usage_error(parser, "play requires --side q|a")
    try:
        configure_logging()
        if args.command == "train":
            cfg = _config_from_args(args)
            summary = train_from_config(cfg, resume_path=args.checkpoint)
            for key, value in summary.items():
                print(f"{key}: {value}")
            return 0
        if args.command == "eval":
            summary = run_eval(args.checkpoint, out_dir=args.out,
                               rounds=args.rounds)
            print(json.dumps(summary, indent=2, sort_keys=True))
            return 0
        if args.command == "analyze":
            text = run_analyze(args.checkpoint, out_dir=args.out,
                               rounds=args.rounds)
            print(text)
            return 0
        if args.command == "play":
            return play(args.checkpoint, args.side,
                        seed=args.seed if args.seed is not None else 0,
                        rounds=args.rounds)
        if args.command == "dump-world":
            cfg = _config_from_args(args).resolved()
            world = World(cfg.n_attributes, cfg.n_values)
            out = args.out or "world"
            images_path, instances_path = write_world_csv(world, out)
            print(images_path)
            print(instances_path)
            return 0
        if args.command == "describe":
            return _describe(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
