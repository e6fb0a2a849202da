"""Command-line entry point: ``biped-mimic <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path


from . import config as cfgmod
from . import experiments as ex
from . import reference as refmod
from .checkpoint import CheckpointError
from .ppo import TrainingError

log = logging.getLogger("biped_mimic")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="key = value overrides file")
    p.add_argument("--seed", type=int, help="overrides train.seed and protocol.seed")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    p.add_argument("--workers", type=int, default=1, help="parallel rollout/sweep workers")
    p.add_argument("--deterministic", action="store_true",
                   help="single worker, wall_seconds written as 0 for bit-identical metrics")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biped-mimic", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the normalizer and train a policy")
    _common(p)
    p.add_argument("--iterations", type=int, help="overrides train.iterations")

    p = sub.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("test-delay", help="sweep observation delays")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--delays", type=_floats, help="comma-separated seconds")

    p = sub.add_parser("test-terrain", help="sweep sinusoidal terrain amplitudes")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--heights", type=_floats, help="comma-separated metres")

    p = sub.add_parser("test-push", help="sweep pelvis pushes")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--directions", type=_floats, help="comma-separated +1/-1")
    p.add_argument("--magnitudes", type=_floats, help="comma-separated newtons")

    p = sub.add_parser("interpolate", help="blend two policies over an episode")
    _common(p)
    p.add_argument("--checkpoint1", type=Path, required=True)
    p.add_argument("--checkpoint2", type=Path, required=True)
    p.add_argument("--mode", choices=("schedule", "fixed", "speed"))
    p.add_argument("--lam", type=float, help="weight on policy 1 for --mode fixed")

    p = sub.add_parser("train-speed", help="train on speed-scaled references")
    _common(p)
    p.add_argument("--speed-scale", type=_floats, required=True, help="comma-separated scales")
    p.add_argument("--iterations", type=int)

    p = sub.add_parser("export-reference", help="write the reference motion CSV")
    _common(p)
    p.add_argument("--speed-scale", type=float)

    p = sub.add_parser("tvlqr-baseline", help="track the reference with TVLQR")
    _common(p)
    return ap


def _config(args, base: cfgmod.Config | None = None) -> cfgmod.Config:
    cfg = cfgmod.Config(base.values if base is not None else None)
    if args.config is not None:
        cfg = cfgmod.load_config(args.config, cfg)
    if args.seed is not None:
        cfg.set("train.seed", args.seed)
        cfg.set("protocol.seed", args.seed)
    return cfg


def _override_text(args) -> str:
    text = args.config.read_text() if args.config is not None else ""
    if args.seed is not None:
        text += f"\nprotocol.seed = {args.seed}\n"
    return text


def _workers(args) -> int:
    return 1 if args.deterministic else max(1, args.workers)


def _progress(m):
    log.info("iter %d  return %.2f  steps %.1f  time-limit %.2f  (%.1fs)", m.iteration, m.mean_return,
             m.mean_episode_steps, m.fraction_time_limit, m.wall_seconds)


def _emit(rep: ex.ExperimentReport, out: Path, stem: str | None = None):
    rep.write(out, stem)
    sys.stdout.write(rep.summary())


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.iterations is not None:
        cfg.set("train.iterations", args.iterations)
    ex.run_training(cfg, args.out, _workers(args), args.deterministic, _progress)
    return 0


def cmd_train_speed(args) -> int:
    base = _config(args)
    if args.iterations is not None:
        base.set("train.iterations", args.iterations)
    args.out.mkdir(parents=True, exist_ok=True)
    curves = []
    for s in args.speed_scale:
        cfg = cfgmod.Config(base.values)
        cfg.set("reference.speed_scale", s)
        cfgmod.validate(cfg)
        hist = ex.run_training(cfg, args.out / f"speed_{s:g}", _workers(args), args.deterministic,
                               _progress)
        curves += [(s, m.iteration, m.mean_return) for m in hist]
    with open(args.out / "learning_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["speed_scale", "iteration", "mean_return"])
        w.writerows([(f"{s:g}", i, repr(r)) for s, i, r in curves])
    return 0


def _policy(args, path=None) -> ex.LoadedPolicy:
    return ex.LoadedPolicy.load(path or args.checkpoint, override_text=_override_text(args))


def cmd_eval(args) -> int:
    _emit(ex.cmd_eval(_policy(args), args.episodes), args.out)
    return 0


def cmd_test_delay(args) -> int:
    _emit(ex.cmd_test_delay(_policy(args), args.delays, workers=_workers(args)), args.out)
    return 0


def cmd_test_terrain(args) -> int:
    _emit(ex.cmd_test_terrain(_policy(args), args.heights, workers=_workers(args)), args.out)
    return 0


def cmd_test_push(args) -> int:
    _emit(ex.cmd_test_push(_policy(args), args.directions, args.magnitudes, workers=_workers(args)),
          args.out)
    return 0


def cmd_interpolate(args) -> int:
    p1 = _policy(args, args.checkpoint1)
    p2 = _policy(args, args.checkpoint2)
    if args.lam is not None:
        p1.config.set("protocol.interp_lambda", args.lam)
    rep, traces = ex.cmd_interpolate(p1, p2, args.mode)
    _emit(rep, args.out)
    with open(args.out / "interpolate_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "t_s", "lambda", "pelvis_vx_mps"])
        for k, tr in enumerate(traces):
            w.writerows([(k, repr(t), repr(lam), repr(vx)) for t, lam, vx in tr])
    return 0


def cmd_export_reference(args) -> int:
    cfg = _config(args)
    if args.speed_scale is not None:
        cfg.set("reference.speed_scale", args.speed_scale)
    motion = cfgmod.reference_motion(cfg)
    out = args.out
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "reference.csv"
    refmod.save(motion, out)
    sys.stdout.write(f"wrote {motion.n_frames} frames to {out}\n")
    return 0


def cmd_tvlqr(args) -> int:
    _emit(ex.cmd_tvlqr(_config(args)), args.out)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "test-delay": cmd_test_delay,
    "test-terrain": cmd_test_terrain,
    "test-push": cmd_test_push,
    "interpolate": cmd_interpolate,
    "train-speed": cmd_train_speed,
    "export-reference": cmd_export_reference,
    "tvlqr-baseline": cmd_tvlqr,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except cfgmod.ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except (CheckpointError, refmod.IncompatibleMotions) as exc:
        log.error("checkpoint error: %s", exc)
        return 3
    except TrainingError as exc:
        log.error("training failed: %s", exc)
        return 4
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 5


if __name__ == "__main__":
    sys.exit(main())
