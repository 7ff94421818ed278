"""Command line entry point: ``python -m dtnrl <command>``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import campaign as camp
from .cltrain import TrainHistory, fine_tune, load_plan, run_cl
from .config import ConfigError, load_config
from .features import DEFAULT_SCHEMA
from .mobility import TraceError
from .qnet import QNetwork, SchemaMismatch, TrainingDiverged
from .sim import InFlightError, make_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def cmd_train(args):
    plan = load_plan(args.plan)
    if args.seed is not None:
        plan.seed = args.seed
    out = Path(args.out)
    (out / "datasets").mkdir(parents=True, exist_ok=True)
    net, store, history = run_cl(plan, replay=not args.no_replay)
    digests = {c.scenario_id: c.digest() for c in plan.scenarios}
    net.meta = {"seed": plan.seed, "config_digests": digests, "replay": not args.no_replay}
    net.save(out / "model.qnet")
    for sid, ds in store.datasets.items():
        ds.save(out / "datasets" / f"{sid}.npz", {"config_digest": digests[sid], "seed": plan.seed})
    fields = ["scenario", "round", "t", "n_per_dataset", "n_batches", "dataset_sizes",
              "train_loss", "val_loss", "skipped"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fields, lineterminator="\n")
    w.writeheader()
    for row in history.rows():
        w.writerow({**row, "dataset_sizes": " ".join(map(str, row["dataset_sizes"]))})
    (out / "losses.csv").write_text(buf.getvalue())
    print(f"trained {len(plan.scenarios)} scenario(s), {len(history.rounds)} rounds -> {out / 'model.qnet'}")


def cmd_finetune(args):
    if not Path(args.model).exists():
        raise ConfigError(f"model file {args.model} not found")
    base = QNetwork.load(args.model, schema_hash=DEFAULT_SCHEMA.hash, n_inputs=DEFAULT_SCHEMA.dim)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(rng_seed=args.seed)
    hist = TrainHistory()
    net = fine_tune(base, cfg, args.budget, args.round, epsilon=args.epsilon, seed=cfg.rng_seed,
                    history=hist)
    net.meta = {**base.meta, "finetune": {"config_digest": cfg.digest(), "seed": cfg.rng_seed,
                                          "budget": args.budget, "round": args.round}}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    net.save(args.out)
    print(f"fine-tuned over {len(hist.rounds)} rounds -> {args.out}")


def cmd_eval(args):
    c = camp.load_campaign(args.campaign)
    if args.seed is not None:
        c.seeds = list(range(args.seed, args.seed + len(c.seeds)))
    results = camp.run_campaign(c)
    rows = camp.write_campaign(results, args.out)
    print(f"{len(rows)} runs -> {Path(args.out) / 'runs.csv'}")


def cmd_analyze(args):
    by_policy = {}
    for p in args.logs:
        if not Path(p).exists():
            raise ConfigError(f"decision log {p} not found")
        # logs are named <scenario>_<policy>_<seed>.csv by eval
        parts = Path(p).stem.rsplit("_", 2)
        pol = parts[1] if len(parts) == 3 else Path(p).stem
        by_policy.setdefault(pol, []).extend(camp.read_decision_log(p))
    report = camp.behavior_report(by_policy)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_export_trace(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(rng_seed=args.seed)
    if args.steps is not None:
        cfg = cfg.replace(duration=args.steps, cooldown=0)
    traj = make_trajectory(cfg)
    traj.to_csv(args.out)
    print(f"{traj.steps} steps x {traj.n_nodes} nodes -> {args.out}")


def build_parser():
    ap = argparse.ArgumentParser(prog="dtnrl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="continual training over a plan file")
    p.add_argument("plan")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-replay", action="store_true", help="sequential training without replay")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a base model on a scenario or trace")
    p.add_argument("model")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--round", type=int, default=50)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="run an evaluation campaign")
    p.add_argument("campaign")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="first seed; overrides the campaign's seeds")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="forwarding-behavior report from decision logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export-trace", help="write a synthetic trajectory as t,node_id,x,y CSV")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_export_trace)
    return ap


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; that is a configuration problem here
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.func(args)
    except (ConfigError, TraceError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaMismatch, TrainingDiverged, InFlightError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK
