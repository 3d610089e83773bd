"""Command line entry point: ``train``, ``ablate`` and ``audit``.

Exit status is 0 on success, 1 when an audit suite fails, 2 for a bad
configuration and 3 when a training run aborts or violates an invariant.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import audit as audit_mod
from .itm import write_snapshot
from .trainer import (
    IMAGINATION_MODES, AuditError, ConfigError, TrainConfig, Trainer, TrainingAborted,
    emit_curves, final_mean, load_config, run_ablation, save_config,
)

log = logging.getLogger("latent_imagination")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _config(args) -> TrainConfig:
    overrides = {"imagination_mode": getattr(args, "mode", None), "episodes": args.episodes}
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        cfg = TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def _seeds(args, cfg):
    if args.seeds:
        return args.seeds
    return [args.seed if args.seed is not None else cfg.seed]


def cmd_train(args) -> int:
    cfg = _config(args)
    seeds = _seeds(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_config(cfg, os.path.join(args.out, "config.txt"))
    streams = []
    for k, seed in enumerate(seeds):
        run_dir = args.out if len(seeds) == 1 else os.path.join(args.out, f"seed{k}")
        os.makedirs(run_dir, exist_ok=True)
        trainer = Trainer(cfg.replace(seed=seed), out_dir=run_dir, audit=args.audit,
                          frame_dump=args.frames)
        stream = []
        for m in trainer.run():
            stream.append(m)
            if (m.episode + 1) % args.log_every == 0:
                log.info("seed %d episode %d return %.1f outcome %s nodes %d imagined %d",
                         seed, m.episode + 1, m.extrinsic_return, m.outcome, m.node_count,
                         m.imagined)
        if trainer.itm is not None:
            write_snapshot(trainer.itm, os.path.join(run_dir, "itm_snapshot.txt"))
        trainer.save_checkpoint()
        streams.append(stream)
        print(f"seed {seed}: final-100 mean extrinsic return {final_mean(stream):.2f}")
    emit_curves(streams, args.out, window=args.window)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    seeds = args.seeds or list(range(5))
    os.makedirs(args.out, exist_ok=True)
    save_config(cfg, os.path.join(args.out, "config.txt"))
    results = run_ablation(cfg, args.depths, seeds, workers=args.workers)
    for depth, streams in results.items():
        emit_curves(streams, args.out, window=args.window, label=f"depth{depth}")
        means = [final_mean(s) for s in streams]
        print(f"depth {depth}: final-100 mean return per seed "
              + " ".join(f"{x:.2f}" for x in means))
    return 0


def cmd_audit(args) -> int:
    names = args.only or list(audit_mod.SUITES)
    unknown = [n for n in names if n not in audit_mod.SUITES]
    if unknown:
        raise ConfigError(f"unknown audit suites {unknown}; choose from {list(audit_mod.SUITES)}")
    failed = 0
    for name in names:
        res = audit_mod.SUITES[name]()
        print(res.line(), flush=True)
        failed += not res.passed
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latent-imagination", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value file of TrainConfig fields")
        sp.add_argument("--out", default="runs", help="output directory")
        sp.add_argument("--episodes", type=int, help="override the episode count")
        sp.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
        sp.add_argument("--window", type=int, help="curve smoothing window")

    t = sub.add_parser("train", help="train one configuration over one or more seeds")
    common(t)
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=IMAGINATION_MODES)
    t.add_argument("--audit", action="store_true", help="check invariants every step")
    t.add_argument("--frames", action="store_true", help="dump observations as PGM files")
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="adaptive imagination at several maximum depths")
    common(a)
    a.add_argument("--depths", type=_int_list, default=[0, 1, 2, 7])
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("audit", help="run the invariant suites")
    d.add_argument("--only", type=lambda s: [x for x in s.split(",") if x],
                   help=f"comma-separated subset of {','.join(audit_mod.SUITES)}")
    d.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (TrainingAborted, AuditError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
