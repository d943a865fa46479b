"""Command line: ``fkc run|sweep|plots|validate``.

Exit codes: 0 success, 2 invalid config, 3 simulation failure, 4 missing dumps.
"""
from __future__ import annotations

import argparse
import sys

from . import harness
from .config import ConfigError, load_config, sweep_cells
from .errors import FKCError, SimulationError

EXIT_CONFIG, EXIT_SIMULATION, EXIT_DUMPS = 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="fkc", description="Feynman-Kac corrected diffusion sampling experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a config and write reports")
    r.add_argument("config")
    r.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    r.add_argument("--dry-run", action="store_true", help="validate only")
    r.add_argument("--out", help="output directory (default: output.dir of the config)")

    s = sub.add_parser("sweep", help="run the config's parameter grid")
    s.add_argument("config")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--out")

    pl = sub.add_parser("plots", help="write plot data and PNG figures for a run directory")
    pl.add_argument("run_dir")
    pl.add_argument("--no-render", action="store_true", help="CSV plot data only")

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            if "sweep" in cfg:
                print(f"ok: {len(sweep_cells(cfg))} sweep cells")
            else:
                print("ok")
        elif args.command == "run":
            if args.seeds < 1:
                raise ConfigError("--seeds", "must be >= 1")
            reports = harness.run(args.config, seeds=args.seeds, out=args.out, dry_run=args.dry_run)
            if args.dry_run:
                print("ok: config valid (dry run)")
            for rep in reports:
                vals = ", ".join(f"{m['metric']}={m['value']:.4g}" for m in rep["metrics"])
                print(f"seed {rep['seed']}: log_z={rep['log_z']:.4f} {vals}")
        elif args.command == "sweep":
            for row in harness.sweep(args.config, seeds=args.seeds, out=args.out):
                print(",".join(str(c) for c in row))
        else:
            dirs = harness.emit_plot_data(args.run_dir)
            for d in dirs:
                files = [] if args.no_render else _render(d)
                print(f"{d}: {len(files)} figures")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation failed (step {exc.step}, particle {exc.particle}): {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except harness.MissingDumpError as exc:
        print(f"missing dumps: {exc}", file=sys.stderr)
        return EXIT_DUMPS
    except FKCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


def _render(plot_dir):
    from .plotting import render

    return render(plot_dir)


if __name__ == "__main__":
    sys.exit(main())
