"""Command-line front end.

Every subcommand reads and writes only the documented file formats. On
failure a single JSON line ``{"error": ..., "field": ..., "message": ...}``
goes to stderr and the exit status is nonzero: 2 for bad arguments or
malformed input files, 1 for inputs outside an operation's domain, 3 when
missing-data reconstruction fails.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .errors import DomainError, ReconstructionError, SchemaError
from .grid import generate_random_feeder
from .harness import ExperimentConfig, run_sweep
from .hidden import learn_with_missing, satisfies_assumption2
from .injection import estimate_injection_stats
from .io import (
    read_grid,
    read_samples,
    read_stats,
    read_topology,
    topology_to_dict,
    write_grid,
    write_samples,
    write_stats,
)
from .learn import cycle_gaps, empirical_phi, learn_topology, partition_into_trees, topology_error
from .lcpf import random_injection_stats, simulate


class UsageError(Exception):
    def __init__(self, field, message):
        super().__init__(message)
        self.field = field
        self.message = message


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        field = "arguments"
        for token in message.replace(",", " ").split():
            token = token.strip(":'\"()")
            if token.startswith("--") or token == "command":
                field = token
                break
        raise UsageError(field, message)


def _range(text):
    try:
        lo, hi = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    return lo, hi


def _id_list(text):
    try:
        return sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated node ids, got {text!r}") from None


def _emit(payload, path):
    text = json.dumps(payload, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args):
    grid, _ = generate_random_feeder(args.nodes, args.extra, args.impedance_range, args.seed)
    write_grid(args.out, grid)


def cmd_simulate(args):
    grid = read_grid(args.grid)
    if grid.operational is None:
        raise SchemaError("edges.operational", "the grid must flag its operational edges to simulate")
    tree = grid.operational_tree()
    rng = np.random.default_rng(args.seed)
    if args.stats:
        stats = read_stats(args.stats, grid.num_nodes)
    else:
        stats = random_injection_stats(grid.num_nodes - 1, var_range=args.var_range, seed=rng)
    samples = simulate(tree, stats, args.samples, rng, with_angles=not args.no_angles)
    if args.hidden:
        samples = samples.drop(args.hidden)
    write_samples(args.out, samples)
    if args.stats_out:
        write_stats(args.stats_out, stats)


def _score(topology, grid):
    if grid.operational is None:
        return None
    return topology_error(topology, grid.operational_tree())


def cmd_learn(args):
    grid = read_grid(args.grid)
    samples = read_samples(args.samples)
    topo = learn_topology(samples, grid, complete_graph=args.complete_graph)
    extra = {}
    if args.diagnostics:
        weights = empirical_phi(samples, range(1, grid.num_nodes))
        cands = grid.edge_keys()
        gaps = cycle_gaps(topo, cands, weights)[: args.diagnostics]
        extra["closest_excluded"] = [
            {"edge": list(g["excluded"]), "phi": g["weight"], "rival": list(g["rival"]), "gap": g["gap"]} for g in gaps
        ]
        extra["groups"] = partition_into_trees(weights, tolerance=args.partition_tolerance)
    _emit(topology_to_dict(topo, _score(topo, grid), extra), args.out)


def cmd_learn_missing(args):
    grid = read_grid(args.grid)
    samples = read_samples(args.samples)
    stats = read_stats(args.stats, grid.num_nodes)
    hidden = args.hidden
    bad = [h for h in hidden if not 0 < h < grid.num_nodes]
    if bad:
        raise SchemaError("--hidden", f"nodes {bad} are not non-root nodes of the grid")
    if grid.operational is not None and not satisfies_assumption2(grid.operational_tree(), hidden):
        sys.stderr.write("warning: hidden nodes violate the spacing rule on the flagged tree\n")
    observed = [n for n in samples.nodes if n not in hidden]
    absent = sorted(set(range(1, grid.num_nodes)) - set(hidden) - set(observed))
    if absent:
        raise SchemaError("header", f"no samples for observed nodes {absent}")
    topo = learn_with_missing(
        samples.restrict(observed),
        grid,
        hidden,
        stats,
        tolerance=args.tolerance,
        mismatch_policy=args.policy,
        candidates=args.candidates,
    )
    extra = {"hidden": hidden, "diagnostics": topo.diagnostics}
    _emit(topology_to_dict(topo, _score(topo, grid), extra), args.out)


def cmd_estimate_injections(args):
    grid = read_grid(args.grid)
    tree = read_topology(args.tree, grid)
    samples = read_samples(args.samples)
    if samples.theta is None:
        raise SchemaError("header", "angle columns theta_<node> are required to recover injections")
    missing = sorted(set(range(1, grid.num_nodes)) - set(samples.nodes))
    if missing:
        raise SchemaError("header", f"no samples for nodes {missing}")
    est = estimate_injection_stats(tree, samples)
    diag = {
        "num_samples": est.num_samples,
        "max_cross_node_covariance": est.cross_node_covariance,
        "max_cross_node_correlation": est.cross_node_correlation,
    }
    write_stats(args.out, est.to_stats(assumption1=False), {"diagnostics": diag})


def cmd_sweep(args):
    config = ExperimentConfig.load(args.config)
    updates = {}
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.out_dir is not None:
        updates["output_dir"] = args.out_dir
    if updates:
        config = ExperimentConfig.model_validate({**config.model_dump(), **updates})
    if config.output_dir is None:
        raise SchemaError("output_dir", "set output_dir in the config or pass --out-dir")
    result = run_sweep(config)
    result.write(config.output_dir)
    if not args.quiet:
        for e in result.summary():
            sys.stdout.write(f"m={e['m']} mean_error={e['mean_error']:.4f} stderr={e['stderr']:.4f}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="gridtopo",
        description="Simulate radial feeders and learn their operating topology from voltage magnitudes.",
        epilog="On failure a JSON error line naming the offending field is written to stderr; "
        "exit status 2 = bad arguments or input file, 1 = domain error, 3 = reconstruction failure.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="random feeder: radial tree plus open candidate lines")
    g.add_argument("--nodes", type=int, required=True, help="number of nodes including the substation (node 0)")
    g.add_argument("--extra", type=int, default=0, help="number of extra (open) candidate lines")
    g.add_argument("--impedance-range", type=_range, default=(0.01, 0.1), metavar="LO,HI",
                   help="uniform range for per-unit r and x (default 0.01,0.1)")
    g.add_argument("--seed", type=int, default=None, help="random seed")
    g.add_argument("--out", required=True, help="grid JSON to write")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="draw injections and write voltage samples (CSV)")
    s.add_argument("--grid", required=True, help="grid JSON with operational flags")
    s.add_argument("--samples", type=int, required=True, help="number of snapshots")
    s.add_argument("--seed", type=int, default=None, help="random seed")
    s.add_argument("--stats", help="injection stats JSON; random stats are drawn when omitted")
    s.add_argument("--stats-out", help="write the stats used to this JSON file")
    s.add_argument("--var-range", type=_range, default=(1e-4, 1e-3), metavar="LO,HI",
                   help="active-power variance range for random stats")
    s.add_argument("--no-angles", action="store_true", help="omit theta_<node> columns")
    s.add_argument("--hidden", type=_id_list, default=[], metavar="IDS", help="comma-separated nodes to leave out")
    s.add_argument("--out", required=True, help="sample CSV to write")
    s.set_defaults(func=cmd_simulate)

    lp = sub.add_parser("learn", help="learn the operating tree with every node observed")
    lp.add_argument("--grid", required=True, help="grid JSON (candidate lines)")
    lp.add_argument("--samples", required=True, help="sample CSV covering every non-root node")
    lp.add_argument("--complete-graph", action="store_true", help="consider every node pair, not just candidate lines")
    lp.add_argument("--diagnostics", type=int, default=0, metavar="K",
                   help="also report the K excluded lines that lost by the smallest margin, and tree groups")
    lp.add_argument("--partition-tolerance", type=float, default=0.1, help="relative tolerance for tree grouping")
    lp.add_argument("--out", help="topology JSON to write (stdout when omitted)")
    lp.set_defaults(func=cmd_learn)

    m = sub.add_parser("learn-missing", help="learn the operating tree when some nodes are unobserved")
    m.add_argument("--grid", required=True, help="grid JSON (candidate lines with impedances)")
    m.add_argument("--samples", required=True, help="sample CSV; columns of hidden nodes are ignored")
    m.add_argument("--hidden", type=_id_list, required=True, metavar="IDS", help="comma-separated unobserved nodes")
    m.add_argument("--stats", required=True, help="injection stats JSON for every non-root node")
    m.add_argument("--tolerance", type=float, default=0.25, help="relative match tolerance (default 0.25)")
    m.add_argument("--policy", choices=("fail", "best"), default="fail",
                   help="on a neighborhood no hypothesis matches: fail, or take the best-scoring one")
    m.add_argument("--candidates", choices=("complete", "grid"), default="complete",
                   help="pairs considered for the observed-node tree")
    m.add_argument("--out", help="topology JSON to write (stdout when omitted)")
    m.set_defaults(func=cmd_learn_missing)

    e = sub.add_parser("estimate-injections", help="recover injection means and covariances")
    e.add_argument("--grid", required=True, help="grid JSON (impedances)")
    e.add_argument("--tree", required=True, help="topology JSON, as written by learn")
    e.add_argument("--samples", required=True, help="sample CSV with eps and theta columns for every node")
    e.add_argument("--out", required=True, help="stats JSON to write")
    e.set_defaults(func=cmd_estimate_injections)

    w = sub.add_parser("sweep", help="Monte Carlo error-vs-sample-count experiment")
    w.add_argument("--config", required=True, help="experiment config JSON")
    w.add_argument("--out-dir", help="output directory (overrides output_dir)")
    w.add_argument("--workers", type=int, help="worker processes (overrides workers)")
    w.add_argument("--quiet", action="store_true", help="do not print the summary")
    w.set_defaults(func=cmd_sweep)
    return p


def _fail(kind, field, message, code):
    sys.stderr.write(json.dumps({"error": kind, "field": field, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        return _fail("usage", exc.field, exc.message, 2)
    except SchemaError as exc:
        return _fail("schema", exc.field, exc.message, 2)
    except ReconstructionError as exc:
        return _fail("reconstruction", f"node {exc.node}", str(exc), 3)
    except DomainError as exc:
        return _fail("domain", None, str(exc), 1)
    except OSError as exc:
        return _fail("io", getattr(exc, "filename", None), exc.strerror or str(exc), 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
