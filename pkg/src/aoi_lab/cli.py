"""``aoi-lab`` command line: graph generation, training, evaluation sweeps,
exhaustive oracle runs and gradient checks.

Exit codes: 0 success, 1 internal error, 2 usage or parameter error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from .errors import CapacityError, DomainError, ParameterError, ParseError, UsageError
from .experiment import (TRAIN_LOG_HEADER, METRICS_HEADER, Trainer, evaluate, ingest_graphs,
                         load_dataset, make_dataset, rows_to_csv, write_dataset)

log = logging.getLogger("aoi_lab")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2
_USAGE_ERRORS = (UsageError, ParameterError, ParseError, CapacityError, DomainError)


def _csv_list(kind):
    def conv(text):
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}")
    return conv


def _key_value(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def resolve_config(args) -> config_mod.ExperimentConfig:
    """Profile, then config file, then ``--set`` pairs, then dedicated flags."""
    profile = getattr(args, "profile", None)
    if profile is not None and profile not in config_mod.PROFILES:
        raise UsageError(f"unknown profile {profile!r}")
    base = config_mod.PROFILES[profile]() if profile else None
    if getattr(args, "config", None):
        with open(args.config) as fh:
            text = fh.read()
        cfg = config_mod.parse(text, base)
    else:
        cfg = base if base is not None else config_mod.desk_profile()
    cfg = config_mod.apply_overrides(cfg, dict(getattr(args, "set", None) or []))
    flags = {}
    if getattr(args, "c_bar", None):
        flags["c_bar"] = args.c_bar
    if getattr(args, "algo", None):
        flags["algo"] = args.algo
    return config_mod.apply_overrides(cfg, flags)


def _workers() -> int:
    raw = os.environ.get("AOI_LAB_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"AOI_LAB_WORKERS must be an integer, got {raw!r}")
    return max(1, min(n, os.cpu_count() or 1))


def _load_graphs(args, cfg, default_split):
    if args.graph:
        return ingest_graphs(args.graph, cfg)
    if not args.graphs:
        raise UsageError("pass --graphs DIR or one or more --graph FILE")
    if not os.path.isdir(args.graphs):
        raise UsageError(f"graph directory {args.graphs} does not exist")
    split = args.split or default_split
    recs = load_dataset(args.graphs, None if split == "all" else split)
    if not recs:
        raise UsageError(f"no {split!r} graphs in {args.graphs}")
    return recs


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    tmp = path + ".tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_graphs(args) -> int:
    cfg = resolve_config(args)
    if args.seed is not None:
        cfg = config_mod.apply_overrides(cfg, {"graph_seed": args.seed})
    if args.count is not None:
        cfg = config_mod.apply_overrides(cfg, {"train_graphs": args.count, "test_graphs": args.count})
    splits = ("train", "test") if args.split == "all" else (args.split,)
    records = [r for s in splits for r in make_dataset(cfg, s)]
    write_dataset(records, args.out)
    log.info("wrote %d graphs to %s", len(records), args.out)
    print(f"{len(records)} graphs -> {args.out}")
    return EXIT_OK


def _prior_log_lines(path, slot):
    """Rows of an existing training log written up to ``slot``."""
    if not path or not os.path.exists(path):
        return []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != ",".join(TRAIN_LOG_HEADER):
        raise UsageError(f"{path} is not a training log")
    return [ln for ln in lines[1:] if ln and int(ln.split(",", 1)[0]) <= slot]


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    graphs = _load_graphs(args, cfg, "train")
    algo = args.algo or "tgms"
    seed = args.seed if args.seed is not None else 0
    total = cfg.train_slots if args.slots is None else args.slots
    if total < 0:
        raise ParameterError("--slots must be nonnegative")
    trainer = Trainer(cfg, graphs, seed=seed, algo=algo, c_bar=cfg.c_bar[0])
    log_path = args.log or args.out + ".csv"
    prior = []
    if args.checkpoint:
        if not os.path.exists(args.checkpoint):
            raise UsageError(f"checkpoint {args.checkpoint} does not exist")
        trainer.restore(args.checkpoint)
        prior = _prior_log_lines(log_path, trainer.slot)
        log.info("resumed from %s at slot %d", args.checkpoint, trainer.slot)

    def flush(tr):
        tr.save(args.out)
        body = rows_to_csv(TRAIN_LOG_HEADER, tr.rows).splitlines()
        _write_text(log_path, "\n".join(body[:1] + prior + body[1:]) + "\n")
        log.info("checkpoint at slot %d (lambda %.4f)", tr.slot, tr.lagrange.lam)

    res = trainer.run(total, on_checkpoint=flush)
    flush(trainer)
    print(f"trained {algo} to slot {res.slots}, lambda {res.lam:.6g}, "
          f"incidents {res.incidents} -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    algo = cfg.algo if args.algo is None else args.algo
    over = {}
    if args.slots is not None:
        over["slots"] = args.slots
    if args.seed is not None:
        over["seeds"] = args.seed
    cfg = config_mod.apply_overrides(cfg, over)
    graphs = _load_graphs(args, cfg, "test")
    if algo in ("tgms", "tgms-mlp") and not args.checkpoint:
        raise UsageError(f"{algo} evaluation needs --checkpoint")
    if algo == "greedy" and args.checkpoint:
        # match the trained scheduler's average selection size
        from . import nn
        if not os.path.exists(args.checkpoint):
            raise UsageError(f"checkpoint {args.checkpoint} does not exist")
        meta = nn.load_checkpoint(args.checkpoint)[1]
        if "selection_fraction" not in meta:
            raise UsageError(f"{args.checkpoint} records no selection fraction")
        cfg = config_mod.apply_overrides(cfg, {"greedy_fraction": float(meta["selection_fraction"])})
        args.checkpoint = None
    elif algo not in ("tgms", "tgms-mlp") and args.checkpoint:
        raise UsageError(f"{algo} is a fixed baseline and takes no checkpoint")
    rows = evaluate(cfg, graphs, algo, args.checkpoint, workers=_workers())
    _write_text(args.out, rows_to_csv(METRICS_HEADER, rows))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .graph import parse_edge_list
    from .tree_mdp import TreeEpisodeContext, brute_force_best_tree, tree_objective
    with open(args.graph) as fh:
        g = parse_edge_list(fh.read())
    dests = g.destinations if args.dests is None else args.dests
    for u in dests:
        if not 0 <= u < g.node_count:
            raise ParameterError(f"destination {u} out of range")
    aoi = np.ones(g.node_count) if args.aoi is None else np.asarray(args.aoi, dtype=float)
    if aoi.shape != (g.node_count,):
        raise ParameterError(f"--aoi needs {g.node_count} values")
    ctx = TreeEpisodeContext.for_graph(g, dests, aoi, args.lam, args.c_bar, args.h_hat)
    tree, val = brute_force_best_tree(g, ctx)
    if tree is None:
        from .graph import component_of
        reach = set(component_of(g, g.source))
        print(f"infeasible: destinations {sorted(set(dests) - reach)} unreachable from source {g.source}")
        return EXIT_OK
    for (u, v), c in sorted(tree.edges.items()):
        print(f"edge {u} {v} {c!r}")
    print(f"energy {float(tree.energy)!r}")
    print(f"objective {float(tree_objective(tree, ctx))!r}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import format_report, gradcheck_networks
    seed = args.seed if args.seed is not None else 0
    results = gradcheck_networks(seed=seed, points=args.points, tolerance=args.tolerance,
                                 corrupt=args.corrupt)
    print(format_report(results))
    failed = [r for r in results if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.worst[1])
        print(f"FAIL: worst offender {worst.network}/{worst.worst[0]} "
              f"relative error {worst.worst[1]:.3e}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aoi-lab", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--profile", choices=sorted(config_mod.PROFILES),
                        help="starting defaults (desk unless the config file names one)")
        sp.add_argument("--set", action="append", type=_key_value, metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    def graphs(sp):
        sp.add_argument("--graphs", help="dataset directory written by gen-graphs")
        sp.add_argument("--graph", action="append", help="edge-list file (static topology)")
        sp.add_argument("--split", choices=("train", "test", "all"))

    sp = sub.add_parser("gen-graphs", help="write a seeded graph dataset")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--count", type=int, help="graphs per split")
    sp.add_argument("--split", choices=("train", "test", "all"), default="all")
    sp.set_defaults(func=cmd_gen_graphs)

    sp = sub.add_parser("train", help="train the learned scheduler and tree generator")
    common(sp)
    graphs(sp)
    sp.add_argument("--out", required=True, help="checkpoint path to write")
    sp.add_argument("--checkpoint", help="resume from this checkpoint")
    sp.add_argument("--log", help="training log CSV (default OUT.csv)")
    sp.add_argument("--algo", choices=("tgms", "tgms-mlp"))
    sp.add_argument("--slots", type=int, help="total training slots")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--c-bar", type=_csv_list(float))
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate one algorithm over graphs x budgets x seeds")
    common(sp)
    graphs(sp)
    sp.add_argument("--algo", choices=config_mod.ALGOS)
    sp.add_argument("--checkpoint")
    sp.add_argument("--out", help="metrics CSV (default stdout)")
    sp.add_argument("--c-bar", type=_csv_list(float))
    sp.add_argument("--slots", type=int)
    sp.add_argument("--seed", type=_csv_list(int), help="comma-separated evaluation seeds")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("oracle", help="exhaustive best tree on a small graph")
    sp.add_argument("graph")
    sp.add_argument("--dests", type=_csv_list(int), help="selected destinations (default all)")
    sp.add_argument("--lam", type=float, default=0.1)
    sp.add_argument("--c-bar", type=float, default=3.0)
    sp.add_argument("--aoi", type=_csv_list(float), help="per-node AoI (default all 1)")
    sp.add_argument("--h-hat", type=float, help="graph length (default hop diameter)")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("gradcheck", help="finite-difference check of both networks")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--points", type=int, default=20)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--corrupt", type=float, nargs="?", const=1e-3, default=0.0,
                    help="bias added to analytic gradients (checker self-test)")
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"aoi-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"aoi-lab: I/O error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"aoi-lab: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
