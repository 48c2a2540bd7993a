"""Command line entry point: ``efpp <subcommand> [options]``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import estimators as E
from . import geodesic as G
from .geometry import GridSpec
from .harness import ConfigError, load_config, run_experiment
from .plots import emit_plots
from .point_process import export_snapshot
from .verification import verify_suite


def _common(p: argparse.ArgumentParser, out: bool = True, workers: bool = False):
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides the config)")
    if out:
        p.add_argument("--out", metavar="DIR", default="efpp_out", help="output directory")
    if workers:
        p.add_argument("--workers", type=int, default=1, metavar="N", help="worker processes")
        p.add_argument("--resume", action="store_true", help="skip replicates already stored in --out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="efpp", description="Euclidean first-passage percolation laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="write an environment snapshot")
    _common(p, out=False)
    p.add_argument("--n", type=float, default=None, help="segment length (default: first n of the config)")
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--raw", action="store_true", help="skip the thinning to Q_n")
    p.add_argument("--out", metavar="FILE", help="snapshot file (default: stdout)")

    p = sub.add_parser("geodesic", help="solve one instance and print the path and its statistics")
    _common(p, out=False)
    p.add_argument("--n", type=float, default=None)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--target", default="T_PP", choices=["T", "T_PRIME", "T_PP"])

    for name, what in (("variance", "variance estimates"), ("influence", "per-box influences"),
                       ("animals", "greedy lattice animal profile"),
                       ("run", "every estimator listed in the config")):
        p = sub.add_parser(name, help=f"run {what}")
        _common(p, workers=True)

    p = sub.add_parser("verify", help="run the deterministic verification suite")
    p.add_argument("--mutate-phi-derivative", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("plot", help="SVG plots from a results CSV")
    p.add_argument("csv", help="results.csv")
    p.add_argument("--out", metavar="DIR", default=None, help="plot directory (default: next to the CSV)")
    return ap


def _config(args, estimator: str | None = None) -> E.ExperimentConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if estimator is not None:
        overrides["estimators"] = (estimator,)
    return load_config(args.config, overrides)


def _print_path(target: str, path: G.PathResult, stats: G.GeodesicStats):
    print(f"target {target}: passage time {path.passage_time!r}")
    print(f"segments {path.n_segments}, longest {path.l_max!r}")
    for i, v in enumerate(path.vertices):
        print(f"  r{i} = ({', '.join(repr(float(c)) for c in v)})")
    print(f"boxes touched {stats.count}, boxes holding vertices {len(stats.boxes_used)}")


def _geodesic(args) -> int:
    cfg = _config(args)
    n = args.n if args.n is not None else cfg.n_values[0]
    a, b = cfg.endpoints(n)
    params = cfg.phi_params(n)
    if args.target == "T_PP":
        view = G.t_double_prime_view(cfg.environment(n, args.replicate), params)
    else:
        env = cfg.environment(n, args.replicate, thinned=False)
        extra = (tuple(a), tuple(b)) if args.target == "T_PRIME" else ()
        view = G.EnvironmentView(env, G.CostMode.EUCLID_POWER, params, extra)
    path = G.passage_time(view, a, b)
    _print_path(args.target, path, G.geodesic_stats(view, path, GridSpec(cfg.dim)))
    return 0


def _sample(args) -> int:
    cfg = _config(args)
    n = args.n if args.n is not None else cfg.n_values[0]
    text = export_snapshot(cfg.environment(n, args.replicate, thinned=not args.raw))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            results = verify_suite(mutate_phi_derivative=args.mutate_phi_derivative)
            return 0 if all(r.passed for r in results) else 1
        if args.command == "plot":
            out = args.out if args.out is not None else Path(args.csv).parent / "plots"
            for path in emit_plots(args.csv, out):
                print(path)
            return 0
        if args.command == "sample":
            return _sample(args)
        if args.command == "geodesic":
            return _geodesic(args)
        cfg = _config(args, None if args.command == "run" else args.command)
        run_experiment(cfg, args.out, workers=args.workers, resume=args.resume, log=print)
        return 0
    except ConfigError as exc:
        print(f"efpp: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"efpp: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
