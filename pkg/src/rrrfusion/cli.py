"""Command-line entry point: ``rrrfusion {run,sweep,calibrate,plot-data}``.

Exit codes: 0 success, 1 invalid input (config or arguments), 2 runtime failure.
Sweep parallelism defaults to ``$RRRFUSION_WORKERS`` (1 if unset).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import ConfigInvalid, RrrFusionError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

log = logging.getLogger("rrrfusion")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    p = _Parser(prog="rrrfusion", description="3-RRR contact detection simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate one scenario and write its log and report")
    r.add_argument("config", help="scenario TOML file or bundled scenario name")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--seed", type=int, default=None, help="override run.seed")

    s = sub.add_parser("sweep", help="latency table across observer gains, seeds or thresholds")
    s.add_argument("configs", nargs="+", help="scenario TOML files or bundled names")
    s.add_argument("--axis", choices=["gains", "seeds", "thresholds"], default="gains")
    s.add_argument("--values", type=_floats, default=None,
                   help="comma-separated gains, seeds or direct force thresholds (N)")
    s.add_argument("--workers", type=int, default=None, help="parallel runs (default: $RRRFUSION_WORKERS or 1)")
    s.add_argument("--out", default=None, help="write <out>.csv and <out>.txt")

    c = sub.add_parser("calibrate", help="identify the IMU mounting from a synthetic excitation run")
    c.add_argument("config")
    c.add_argument("--out", default="calibration.toml", help="calibration TOML to write")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--noise-scale", type=float, default=None, help="multiply the IMU noise densities")

    d = sub.add_parser("plot-data", help="write CSV series for acceleration and force plots")
    d.add_argument("config")
    d.add_argument("--out", default="plots", help="output directory (default: plots)")
    d.add_argument("--seed", type=int, default=None)
    return p


def _cmd_run(args):
    from .workflows import simulate, write_run

    res = simulate(load_config(args.config), args.seed)
    out = write_run(res, args.out)
    for name, rep in res.reports.items():
        status = "-" if not rep.fired else ("false positive" if rep.false_positive else f"{rep.delta_ms:g} ms")
        print(f"{name:14s} {status}")
    for k, v in res.metrics.items():
        print(f"{k:18s} {v:.4g}")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_sweep(args):
    from .workflows import sweep

    configs = [load_config(c) for c in args.configs]
    values = args.values
    if args.axis == "seeds" and values is not None:
        values = [int(v) for v in values]
    table = sweep(configs, args.axis, values, args.workers)
    text = table.to_text()
    print(text, end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(f"{args.out}.csv").write_text(table.to_csv())
        Path(f"{args.out}.txt").write_text(text)
    return EXIT_OK


def _cmd_calibrate(args):
    from .workflows import calibrate, write_calibration_run

    run = calibrate(load_config(args.config), args.seed, args.noise_scale)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_calibration_run(run, args.out)
    m = run.result.mount
    print("position_mm " + " ".join(f"{v:.3f}" for v in m.position * 1e3))
    print("angles_deg  " + " ".join(f"{v:.4f}" for v in m.angles * 180.0 / 3.141592653589793))
    print("error_mm    " + " ".join(f"{v:.3f}" for v in run.position_error_mm))
    print("error_deg   " + " ".join(f"{v:.4f}" for v in run.angle_error_deg))
    print(f"objective   {run.result.objective:.6g}")
    return EXIT_OK


def _cmd_plot_data(args):
    from .workflows import plot_data

    for p in plot_data(load_config(args.config), args.out, args.seed):
        print(f"wrote {p}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "calibrate": _cmd_calibrate, "plot-data": _cmd_plot_data}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigInvalid as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RrrFusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
