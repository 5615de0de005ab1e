"""Command line entry point: ``samrl <subcommand> ...``.

Subcommands: gen-data, corrupt, pretrain, train, eval, surface, sweep, report, run.
Experiment-level commands take ``--config FILE``, repeatable ``--set key=value``
overrides and repeatable ``--seed``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .corruption import CorruptionConfig, corrupt, save_masks
from .envs_data import (evaluate_policy, env_for_dataset, generate_dataset, load_dataset, make_env,
                        normalized_score, save_dataset)
from .landscape import evaluate_surface, filter_normalized_directions, reward_evaluator, v_loss_evaluator, \
    write_surface_csv
from .rl_iql import METRIC_FIELDS, train


def _experiment_config(args) -> harness.ExperimentConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed:
        overrides["seeds"] = ",".join(str(s) for s in args.seed)
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    try:
        return harness.load_config(args.config, overrides)
    except harness.ConfigError as exc:
        for key, msg in sorted(exc.errors.items()):
            print(f"config error: {key}: {msg}", file=sys.stderr)
        raise SystemExit(2)


def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--seed", action="append", type=int, help="seed (repeatable)")


def cmd_gen_data(args):
    env = make_env(args.env)
    ds = generate_dataset(env, args.behavior, args.n, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} transitions to {args.out}")


def cmd_corrupt(args):
    ds = load_dataset(args.data)
    cfg = CorruptionConfig(mode=args.mode, elements=args.elements, rate=args.rate, eps=args.eps,
                           pgd_steps=args.pgd_steps, pgd_step_size=args.pgd_step_size, seed=args.seed)
    q_p = harness.load_agent(args.attacker) if args.attacker else None
    out, masks = corrupt(ds, cfg, q_p)
    save_dataset(out, args.out)
    save_masks(masks, args.mask_dir or Path(args.out).parent, prefix=Path(args.out).stem + "_mask")
    print(f"corrupted {', '.join(f'{k}={len(v)}' for k, v in masks.items())}; wrote {args.out}")


def cmd_pretrain(args):
    cfg = _experiment_config(args)
    ds = load_dataset(args.data)
    nets = harness.pretrain_attacker(ds, cfg, cfg.seeds[0])
    harness.save_agent(nets, args.out, f"# config_hash={cfg.config_hash()}\n")
    print(f"attacker Q ensemble written to {args.out}")


def cmd_train(args):
    cfg = _experiment_config(args)
    ds = load_dataset(args.data)
    nets, metrics = train(ds, cfg.train, cfg.seeds[0])
    h = cfg.config_hash()
    harness.save_agent(nets, args.out, f"# config_hash={h}\n")
    rows = [[harness._fmt(r[k]) for k in METRIC_FIELDS] for r in metrics]
    (Path(args.out) / "metrics.csv").write_text(harness._csv_text(list(METRIC_FIELDS), rows, h))
    print(f"trained {cfg.train.steps} steps; agent written to {args.out}")


def cmd_eval(args):
    nets = harness.load_agent(args.run)
    env = make_env(args.env)
    raw, std = evaluate_policy(env, (nets.actor_spec, nets.actor), args.episodes, args.seed)
    score = normalized_score(raw, env)
    print(f"return {raw!r} (std {std!r}); normalized {score!r}")
    if args.out:
        Path(args.out).write_text(f"seed,raw,normalized\n{args.seed},{raw!r},{score!r}\n")


def cmd_surface(args):
    nets = harness.load_agent(args.run)
    if args.kind == "loss":
        ds = load_dataset(args.data)
        idx = np.random.default_rng(args.seed).choice(len(ds), size=min(args.batch, len(ds)), replace=False)
        cfg = harness.load_config(args.config).train if args.config else harness.IqlConfig()
        evaluator, center = v_loss_evaluator(nets, ds.batch(np.sort(idx)), cfg), nets.v
    else:
        env = env_for_dataset(load_dataset(args.data)) if args.data else make_env(args.env)
        evaluator, center = reward_evaluator(nets, env, args.episodes, args.seed)
    d1, d2 = filter_normalized_directions(center, args.seed)
    grid = evaluate_surface(evaluator, center, d1, d2, args.half_range, args.resolution)
    csv_path, summary = write_surface_csv(grid, args.out)
    print(f"wrote {csv_path} and {summary}")


def cmd_sweep(args):
    cfg = _experiment_config(args)
    defaults = {"rho": harness.RHO_GRID, "sam_component": harness.COMPONENT_GRID, "batch_size": harness.BATCH_GRID,
                "corruption_rate": harness.RATE_GRID, "corruption_range": harness.RANGE_GRID}
    values = args.values.split(",") if args.values else defaults[args.axis]
    by_values = (args.by_values.split(",") if args.by_values else defaults[args.by]) if args.by else ()
    out = args.out or Path(cfg.output_dir) / f"sweep_{args.axis}{'_' + args.by if args.by else ''}.csv"
    table = harness.run_sweep(cfg, args.axis, values, args.by, by_values, workers=args.workers, out_path=out)
    for bv in table.by_values:
        print(f"{args.by or args.axis} {bv or '-'}: average {table.column_average(bv):.2f}, "
              f"improvement {table.improvement(bv):+.2f}")
    print(f"wrote {out}")


def cmd_report(args):
    try:
        table = harness.report(args.dirs)
    except harness.ProvenanceError as exc:
        print(f"refusing to aggregate: {exc}", file=sys.stderr)
        raise SystemExit(3)
    text = table.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_run(args):
    cfg = _experiment_config(args)
    table = harness.run_experiment(cfg, workers=args.workers)
    row = table.rows[0]
    print(f"{row.variant}: {row.mean:.2f} ({row.std:.2f}) over {len(row.scores)} seeds -> "
          f"{Path(cfg.output_dir) / cfg.config_hash()}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="samrl", description="Sharpness-aware offline RL experiments on toy tasks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a behaviour dataset (.ods)")
    p.add_argument("--env", default="point_mass_2d")
    p.add_argument("--behavior", default="replay_mix", choices=["medium_noisy", "replay_mix"])
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("corrupt", help="corrupt a dataset and write its masks")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="random", choices=["random", "adversarial"])
    p.add_argument("--elements", default="observation", help="comma list or 'mixture'")
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--pgd-steps", type=int, default=10)
    p.add_argument("--pgd-step-size", type=float, default=0.1)
    p.add_argument("--attacker", help="directory written by `pretrain` (adversarial mode)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("pretrain", help="train the attacker Q ensemble on clean data")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train an agent on a dataset")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained actor")
    p.add_argument("--run", required=True, help="agent directory")
    p.add_argument("--env", default="point_mass_2d")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="scores.csv path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("surface", help="2-D loss or reward surface around a trained agent")
    p.add_argument("--run", required=True)
    p.add_argument("--kind", default="loss", choices=["loss", "reward"])
    p.add_argument("--data", help="dataset for the loss surface (or env metadata)")
    p.add_argument("--config")
    p.add_argument("--env", default="point_mass_2d")
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--half-range", type=float, default=1.0)
    p.add_argument("--resolution", type=int, default=31)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="surface.csv")
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("sweep", help="ablation sweep over one axis (optionally crossed with --by)")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=harness.SWEEP_AXES)
    p.add_argument("--values", help="comma list; defaults to the standard grid for the axis")
    p.add_argument("--by", choices=harness.SWEEP_AXES)
    p.add_argument("--by-values")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output-dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate experiment directories into one table")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline for every seed of a config")
    _add_config_flags(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
