"""Batch command line: generate, train-ae, train-effect, stack, discover, report.

Exit codes: 0 success, 2 bad configuration or arguments, 3 data generation
failure, 4 a prerequisite artifact is missing.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from .datagen import GenerationError
from .dodag import GraphError
from .pipeline import (ConfigError, MissingArtifact, RunConfig, RunPaths, generate, load_graph, node_report,
                       resolve_config, run_discovery, stack_chain, train_autoencoders, train_pair, write_tables)

EXIT_OK, EXIT_CONFIG, EXIT_GENERATION, EXIT_MISSING = 0, 2, 3, 4

log = logging.getLogger("crlkit")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run config (default: $CRLKIT_CONFIG, else built-in defaults)")
    p.add_argument("--name", help="run name; outputs go to <runs_dir>/<name>/")
    p.add_argument("--runs-dir", dest="runs_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="max concurrent training tasks")
    p.add_argument("--dry-run", action="store_true", help="validate config and prerequisites only")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="crlkit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--years", type=int)
    p.add_argument("--graph", dest="graph_file", help="graph JSON (default: built-in hydrology graph)")

    p = sub.add_parser("train-ae", parents=[common], help="train node autoencoders")
    p.add_argument("--node", required=True, help="node id or 'all'")
    p.add_argument("--epochs", dest="ae_epochs", type=int)

    p = sub.add_parser("train-effect", parents=[common], help="train one latent effect")
    p.add_argument("--cause", required=True, help="cause id(s), comma-separated")
    p.add_argument("--result", required=True)
    p.add_argument("--iterations", dest="effect_iterations", type=int)

    p = sub.add_parser("stack", parents=[common], help="stack pair effects along a path and fine-tune")
    p.add_argument("--chain", required=True, help="comma-separated node path, e.g. B,E,F,I,J")

    p = sub.add_parser("discover", parents=[common], help="greedy discovery; writes discovery.csv")
    p.add_argument("--mode", choices=("ordering", "open"))
    p.add_argument("--strict-alg1", dest="strict_alg1", action="store_const", const=True)
    p.add_argument("--gain-threshold", dest="gain_threshold", type=float)

    p = sub.add_parser("report", parents=[common], help="SVG yearly overlays and summary tables")
    p.add_argument("--node", default="all")
    p.add_argument("--year", type=int, default=1)

    sub.add_parser("fges", parents=[common], help="FGES baseline (not available)")
    return ap


OVERRIDES = ("name", "runs_dir", "seed", "years", "graph_file", "ae_epochs", "effect_iterations",
             "mode", "strict_alg1", "gain_threshold")


def _config(args) -> RunConfig:
    cfg = resolve_config(args.config)
    cfg = cfg.with_overrides(**{k: getattr(args, k) for k in OVERRIDES if hasattr(args, k)})
    try:
        load_graph(cfg)
    except (GraphError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid graph file {cfg.graph_file}: {exc}") from None
    return cfg


def _nodes(cfg: RunConfig, spec: str) -> List[str]:
    ids = load_graph(cfg).ids
    if spec == "all":
        return ids
    nodes = [s.strip() for s in spec.split(",") if s.strip()]
    bad = [n for n in nodes if n not in ids]
    if bad or not nodes:
        raise ConfigError(f"unknown node id(s): {', '.join(bad) or spec!r}; graph has {', '.join(ids)}")
    return nodes


def _check_prereqs(cfg: RunConfig, args) -> None:
    paths = RunPaths.of(cfg)
    cmd = args.command
    if cmd == "generate":
        return
    paths.require(paths.data / "manifest.json", "dataset (run `generate` first)")
    if cmd == "train-ae":
        _nodes(cfg, args.node)
    elif cmd == "train-effect":
        need = _nodes(cfg, args.cause) + _nodes(cfg, args.result)
        for n in need:
            paths.require(paths.ae(n), f"autoencoder for {n} (run `train-ae`)")
    elif cmd == "stack":
        for n in _nodes(cfg, args.chain):
            paths.require(paths.ae(n), f"autoencoder for {n} (run `train-ae`)")
    elif cmd == "discover":
        for n in load_graph(cfg).ids:
            paths.require(paths.ae(n), f"autoencoder for {n} (run `train-ae`)")
    elif cmd == "report":
        for n in _nodes(cfg, args.node):
            paths.require(paths.ae(n), f"autoencoder for {n} (run `train-ae`)")


def run(args) -> int:
    if args.command == "fges":
        print("fges: the FGES baseline is not implemented in this toolkit; "
              "plug an external implementation into this subcommand.", file=sys.stderr)
        return EXIT_CONFIG
    cfg = _config(args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    _check_prereqs(cfg, args)
    if args.dry_run:
        print(f"dry run ok: {args.command} -> {RunPaths.of(cfg).root}")
        return EXIT_OK
    cmd = args.command
    if cmd == "generate":
        print(generate(cfg))
    elif cmd == "train-ae":
        for r in train_autoencoders(cfg, _nodes(cfg, args.node), jobs=args.jobs):
            print(f"{r.subject}: rmse_scaled={r.rmse_scaled:.4f} rmse_original={r.rmse_original:.4f} "
                  f"bce_mask={r.bce_mask:.4f}")
    elif cmd == "train-effect":
        e, rep = train_pair(cfg, _nodes(cfg, args.cause), _nodes(cfg, args.result)[0])
        print(f"{e.key}: kld={rep.kld:.4f} nse={rep.effect_nse} rmse_scaled={rep.effect_rmse_scaled:.4f}")
    elif cmd == "stack":
        chain, reps, score = stack_chain(cfg, _nodes(cfg, args.chain))
        for r in reps:
            print(f"junction {r.junction}: rmse {r.rmse_before:.4f} -> {r.rmse_after:.4f}")
        print(f"{'=>'.join(_nodes(cfg, args.chain))}: nse={score}")
    elif cmd == "discover":
        res = run_discovery(cfg)
        for e in res.edges:
            print(f"{e.round:2d} {e.name:6s} kld={e.kld:.4f} gain={e.gain:.4f}")
        print(f"status: {res.status} {res.diagnostic}".rstrip())
    elif cmd == "report":
        for n in _nodes(cfg, args.node):
            print(node_report(cfg, n, args.year))
        for p in write_tables(cfg):
            print(p)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (GenerationError, GraphError) as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_GENERATION


if __name__ == "__main__":
    sys.exit(main())
