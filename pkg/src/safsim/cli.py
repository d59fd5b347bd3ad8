"""Command-line entry point: ``safsim run | topo | golden-examples``."""
from __future__ import annotations

import argparse
import dataclasses
import sys

from . import scenario, topology
from .harness import golden_checks

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="safsim", description="NDN forwarding simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--out")
    run.add_argument("--format", choices=("csv", "report"), default="csv")
    run.add_argument("--parallel", type=int,
                     help=f"worker processes (default: ${scenario.PARALLEL_ENV} or 1)")

    topo = sub.add_parser("topo", help="generate or check a topology file")
    topo.add_argument("action", choices=("gen", "check"))
    topo.add_argument("path", help="scenario config (gen) or topology file (check)")
    topo.add_argument("--seed", type=int)
    topo.add_argument("--out")

    sub.add_parser("golden-examples", help="replay the single-router worked examples")
    return p


def _write(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_run(args):
    cfg = scenario.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.runs is not None:
        cfg.runs = args.runs
    cfg.validate()
    report = scenario.run_scenario(cfg, parallel=args.parallel)
    text = scenario.emit_report(report, args.format, args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_topo(args):
    if args.action == "gen":
        cfg = scenario.load_config(args.path)
        if cfg.topology is None:
            raise scenario.ValidationError(["topo gen needs an inline topology spec"])
        spec = dataclasses.replace(cfg.topology)
        seed = cfg.seed if args.seed is None else args.seed
        _write(topology.dump_topology(topology.generate(spec, seed)), args.out)
        return EXIT_OK
    try:
        topo = topology.load_topology(args.path)
        topo.validate()
    except ValueError as exc:
        print(f"invalid topology: {exc}", file=sys.stderr)
        return EXIT_INVALID
    c = topology.connectivity(topo) if len(topo.routers) >= 2 else float("nan")
    _write(
        f"routers {len(topo.routers)}\nclients {len(topo.clients)}\n"
        f"servers {len(topo.servers)}\nedges {len(topo.edges)}\n"
        f"router_edges {len(topo.router_edges())}\nconnectivity {c:.6f}\n",
        args.out,
    )
    return EXIT_OK


def _cmd_golden(args):
    checks = golden_checks()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INVALID


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "topo": _cmd_topo, "golden-examples": _cmd_golden}[args.command]
    try:
        return handler(args)
    except (scenario.ParseError, scenario.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME if not isinstance(exc, FileNotFoundError) else EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report any simulation failure as a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
