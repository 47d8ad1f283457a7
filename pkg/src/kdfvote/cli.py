"""Command-line entry point: ``kdfvote {run,sweep,time,gen}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import SWEEP_AXES, ExperimentConfig
from .errors import ConfigError
from .experiment import generate_archive, run_experiment, sweep, time_voting

log = logging.getLogger("kdfvote")


def _parse_values(text: str) -> tuple:
    vals = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            vals.append(int(item))
        except ValueError:
            try:
                vals.append(float(item))
            except ValueError:
                raise argparse.ArgumentTypeError(f"not a number: {item!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty value list")
    return tuple(vals)


def _seed(text: str) -> int:
    try:
        seed = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdfvote",
        description="Synthetic benchmark for distance-field keypoint voting.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config")
    common.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
    common.add_argument("--scenes", type=int, help="number of scenes (overrides the config)")
    common.add_argument("--workers", type=int, help="worker processes (overrides the config)")

    p = sub.add_parser("run", parents=[common], help="run one experiment")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--occlusion", action=argparse.BooleanOptionalAction, default=None,
                   help="apply keypoint occluders")

    p = sub.add_parser("sweep", parents=[common], help="run an ablation grid")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--axis", choices=SWEEP_AXES, help="parameter to vary")
    p.add_argument("--values", type=_parse_values, help="comma-separated grid values")
    p.add_argument("--occlusion", action=argparse.BooleanOptionalAction, default=None,
                   help="apply keypoint occluders")

    p = sub.add_parser("time", parents=[common], help="time the voting stage")
    p.add_argument("--repetitions", type=int, help="timed calls (default from config)")
    p.add_argument("--out", type=Path, help="also write timing.json here")

    p = sub.add_parser("gen", parents=[common], help="write a scene archive")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for key in ("seed", "scenes", "workers"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "occlusion", None) is not None:
        overrides["occlusion"] = args.occlusion
    if overrides:
        try:
            cfg = cfg.replace(**overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def _cmd_run(args, cfg):
    report = run_experiment(cfg)
    report.write(args.out)
    sys.stdout.write(report.summary_csv())


def _cmd_sweep(args, cfg):
    axis = args.axis or cfg.axis
    values = args.values if args.values is not None else cfg.values
    if axis is None:
        raise ConfigError("sweep needs --axis (or 'axis' in the config)")
    result = sweep(cfg, axis, values)
    result.write(args.out)
    sys.stdout.write(result.csv())


def _cmd_time(args, cfg):
    timing = time_voting(cfg, args.repetitions)
    text = json.dumps(timing, sort_keys=True)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "timing.json").write_text(text + "\n")
    print(text)


def _cmd_gen(args, cfg):
    paths = generate_archive(cfg, args.out)
    print(json.dumps({"scenes": len(paths), "out": str(args.out)}))


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "time": _cmd_time, "gen": _cmd_gen}


def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _error("config", str(exc), 2)
    except OSError as exc:
        return _error("io", str(exc), 1)
    except Exception as exc:  # noqa: BLE001 - last-resort reporting for the CLI
        log.debug("unhandled error", exc_info=True)
        return _error(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
