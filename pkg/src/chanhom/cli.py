"""Command-line entry points.

Exit codes: 0 success, 1 configuration/usage error, 2 numerical failure.
"""

import argparse
import sys
from pathlib import Path

from . import harness
from .errors import AlignmentError, ConfigError, GeometryError, SolverError, StabilityError


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    numerical failures and use 1 for anything configuration-shaped."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="chanhom",
        description="Thin-channel transport simulator and scale-convergence studies",
    )
    sub = p.add_subparsers(dest="command")

    def config_arg(sp):
        sp.add_argument("config", nargs="?", default=None)
        sp.add_argument("--config", dest="config_flag", default=None, help="config file path")

    run = sub.add_parser("run", help="full study: micro sweep, limit model, error report")
    config_arg(run)
    run.add_argument("--out", default=None, help="output directory (default from config)")
    run.add_argument("--threads", type=int, default=1, help="parallel micro runs")
    run.add_argument("--seed", type=int, default=None, help="override config seed")

    ver = sub.add_parser("verify-operators", help="unfolding identity suite on random fields")
    config_arg(ver)
    ver.add_argument("--seed", type=int, default=None)

    mic = sub.add_parser("micro", help="channel-resolved runs only, write fields")
    config_arg(mic)
    mic.add_argument("--out", default=None)

    mac = sub.add_parser("macro", help="limit-model run only, write fields")
    config_arg(mac)
    mac.add_argument("--out", default=None)

    rep = sub.add_parser("report", help="re-derive report.csv from a stored study")
    rep.add_argument("study_dir")
    return p


def _load(args):
    path = args.config if args.config is not None else getattr(args, "config_flag", None)
    if path is None:
        raise ConfigError("a config file is required (positional or --config)")
    if args.config is not None and getattr(args, "config_flag", None) is not None:
        raise ConfigError("give the config either positionally or via --config, not both")
    cfg = harness.load_config(path)
    if getattr(args, "seed", None) is not None:
        cfg.echo["seed"] = args.seed
        cfg.seed = args.seed
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _dispatch(args)
    except (ConfigError, GeometryError, AlignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, StabilityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "run":
        cfg = _load(args)
        rep, manifest = harness.run_study(cfg, out_dir=args.out, threads=args.threads)
        out = Path(args.out if args.out is not None else cfg.output_dir)
        print(harness.report_csv_text(rep), end="")
        print(f"study written to {out} ({len(manifest['files'])} files + manifest.json)")
        return 0

    if args.command == "verify-operators":
        cfg = _load(args)
        worst, flat_max, ok = harness.verify_operators(cfg)
        for eps, res in worst.items():
            for name, val in res.items():
                print(f"eps={eps} {name}: {val:.3e}")
        print(f"max identity residual {flat_max:.3e}")
        return 0 if ok else 2

    if args.command == "micro":
        cfg = _load(args)
        out = Path(args.out if args.out is not None else cfg.output_dir)
        writer = harness.StudyWriter(out)
        for eps in cfg.epsilons:
            _, grid, _, snaps = harness.run_micro_study(cfg, eps)
            for idx, state in enumerate(snaps):
                writer.write(
                    f"fields/micro_eps{int(1 / eps)}_s{idx:04d}.csv",
                    harness.micro_field_csv(grid, state),
                )
            print(f"eps={eps}: {len(snaps)} snapshots, {grid.n_cells} cells")
        return 0

    if args.command == "macro":
        cfg = _load(args)
        out = Path(args.out if args.out is not None else cfg.output_dir)
        writer = harness.StudyWriter(out)
        sim, snaps = harness.run_macro_study(cfg)
        for idx, state in enumerate(snaps):
            writer.write(f"fields/macro_bulk_s{idx:04d}.csv", harness.macro_bulk_csv(sim, state))
            writer.write(f"fields/macro_cells_s{idx:04d}.csv", harness.macro_cells_csv(sim, state))
            writer.write(
                f"fields/macro_traces_s{idx:04d}.csv", harness.macro_traces_csv(sim, state)
            )
        print(f"macro run: {len(snaps)} snapshots, {sim.n} unknowns")
        return 0

    if args.command == "report":
        rep = harness.rederive_report(args.study_dir)
        print(harness.report_csv_text(rep), end="")
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
