"""Command-line entry point: run, report, stats, prep, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .features import build_node_table, export_node_csv, load_panel, load_pvalues_csv
from .graph import (Graph, GraphStats, graph_stats, largest_connected_component, load_edge_csv,
                    load_node_csv, normalized_adjacency)
from .models import ARCHITECTURES, ModelSpec, forward, init_params
from .report import write_curves, write_report
from .rng import stream
from .runner import ConfigError, collect_series, parse_config, run_experiment
from .tensor import Tensor, gradient_check, weighted_bce_with_logits

GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def random_graph(n: int = 12, n_feat: int = 4, p: float = 0.3, seed: int = 0):
    """Seeded Erdos-Renyi graph with Gaussian features and mixed labels."""
    rng = stream(seed, "gradcheck-graph")
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    graph = Graph([f"v{i}" for i in range(n)], np.stack([iu[keep], ju[keep]], axis=1),
                  np.ones(int(keep.sum())))
    x = rng.standard_normal((n, n_feat))
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[: n // 3]] = 1
    return graph, x, labels


def gradcheck_model(arch: str, seed: int = 0) -> float:
    """Max relative gradient error of one architecture's loss on a random 12-node graph."""
    graph, xv, labels = random_graph(seed=seed)
    adj = normalized_adjacency(graph)
    spec = ModelSpec(arch, xv.shape[1], hidden_dim=8, dropout=0.0)
    params = init_params(spec, seed)
    x = Tensor(xv)
    mask = np.ones(len(labels), dtype=bool)

    def loss():
        return weighted_bce_with_logits(forward(spec, params, adj, x, "eval"), labels, 2.0, mask)

    return gradient_check(loss, list(params.values()) + [x])


def _cmd_gradcheck(args) -> int:
    models = [args.model] if args.model else list(ARCHITECTURES)
    ok = True
    for arch in models:
        err = gradcheck_model(arch, args.seed)
        status = "PASS" if err < GRADCHECK_TOL else "FAIL"
        ok &= err < GRADCHECK_TOL
        print(f"{arch:<8} max_rel_err={err:.3e} {status}")
    return 0 if ok else 1


def _cmd_stats(args) -> int:
    graph = load_edge_csv(args.edges)
    table = load_node_csv(args.nodes, graph, fill_missing=args.fill_missing)
    if args.lcc:
        graph, table = largest_connected_component(graph, table)
    stats = graph_stats(graph, table)
    print(",".join(GraphStats.HEADER))
    print(stats.csv_row())
    return 0


def _cmd_prep(args) -> int:
    graph = load_edge_csv(args.edges)
    table = build_node_table(load_pvalues_csv(args.pvalues), load_panel(args.panel), graph,
                             args.transform)
    export_node_csv(table, graph, args.out)
    print(f"wrote {graph.n_nodes} nodes ({table.n_pos} positive) to {args.out}")
    return 0


def _emit_reports(output_dir) -> None:
    series = collect_series(output_dir)
    if not series:
        raise FileNotFoundError(f"no run CSVs under {output_dir}/runs")
    agg = write_report(series, output_dir)
    write_curves(series, output_dir, agg)


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    records = run_experiment(cfg, threads=args.threads)
    failed = [r for r in records if r.status == "failed"]
    done = len(records) - len(failed)
    if done:
        _emit_reports(cfg.output_dir)
    print(f"{done} run(s) complete, {len(failed)} failed; output in {cfg.output_dir}")
    return 1 if failed else 0


def _cmd_report(args) -> int:
    _emit_reports(args.output_dir)
    with open(f"{args.output_dir}/report.txt", encoding="utf-8") as fh:
        print(fh.read(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gnnbench", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None, help="cap on worker processes")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="train every model/replicate in a config")
    p.add_argument("config")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="rebuild report and curves from saved runs")
    p.add_argument("output_dir")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("stats", help="print network statistics as CSV")
    p.add_argument("--edges", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--lcc", action="store_true", help="restrict to the largest component first")
    p.add_argument("--fill-missing", action="store_true")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("prep", help="build a node CSV from region p-values and a gene panel")
    p.add_argument("--pvalues", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--transform", choices=("raw", "neglog10"), default="neglog10")
    p.set_defaults(func=_cmd_prep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every model")
    p.add_argument("--model", choices=ARCHITECTURES)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"gnnbench: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"gnnbench: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
