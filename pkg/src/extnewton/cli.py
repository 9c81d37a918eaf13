"""Command line entry points.

    extnewton basin --config rf5_nr.json --out out/
    extnewton beam --out out/

Exit codes: 0 success, 2 bad configuration or usage, 3 the experiment
itself failed.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import expcli

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 2, 3


class ExperimentFailed(RuntimeError):
    pass


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise expcli.ConfigError("cannot read config %s: %s" % (path, exc)) from None
    if not isinstance(cfg, dict):
        raise expcli.ConfigError("config must be a JSON object")
    return cfg


def resolve_seed(args, cfg):
    """--seed, then the config's "seed", then $NONLIN_SEED, then 0."""
    if args.seed is not None:
        return args.seed
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get("NONLIN_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise expcli.ConfigError("NONLIN_SEED must be an integer") from None
    return 0


def cmd_basin(args, cfg, seed):
    if not cfg:
        raise expcli.ConfigError("basin needs --config")
    grid, report = expcli.basin_map(cfg, workers=args.workers)
    expcli.write_basin(grid, report, args.out)
    print("coverage %.2f%% (converged incl. unmatched %.2f%%)"
          % (report.coverage_percent, report.converged_percent))


def cmd_mingrid(args, cfg, seed):
    if not cfg:
        raise expcli.ConfigError("mingrid needs --config")
    g = expcli.minimisation_grid({**cfg, "seed": seed}, workers=args.workers)
    expcli.write_mingrid(g, args.out)


def cmd_rateorder(args, cfg, seed):
    theta0 = cfg.get("theta0")
    rows, traces = expcli.rate_order_report(cfg.get("model", "gn2"), theta0,
                                            cfg.get("snr_db"), int(cfg.get("n_obs", 20)), seed)
    if not rows:
        raise ExperimentFailed("too few iterations for a rate/order estimate")
    os.makedirs(args.out, exist_ok=True)
    expcli.write_csv(os.path.join(args.out, "rateorder.csv"), ["method", "n", "order_q", "rate_mu"], rows)


def cmd_fem_forward(args, cfg, seed):
    if not cfg:
        raise expcli.ConfigError("fem-forward needs --config")
    problem, res = expcli.fem_forward(cfg, seed)
    expcli.write_fem_forward(problem, res, args.out)
    for m, (state, tr) in res.items():
        print("%s: %s after %d iterations%s" % (m, tr.status, tr.iterations,
                                                 ", length %.6g m" % state.length if state else ""))


def cmd_fem_inverse(args, cfg, seed):
    traces = expcli.fem_inverse(cfg, seed)
    os.makedirs(args.out, exist_ok=True)
    expcli.write_fits(traces, os.path.join(args.out, "fits.csv"))


def cmd_phisweep(args, cfg, seed):
    if not cfg:
        raise expcli.ConfigError("phisweep needs --config")
    rows = expcli.phisweep(cfg, seed)
    os.makedirs(args.out, exist_ok=True)
    expcli.write_csv(os.path.join(args.out, "phisweep.csv"), ["seed", "phi", "iterations", "status"], rows)


def cmd_beam(args, cfg, seed):
    rows, tr = expcli.beam_fit(float(cfg.get("theta0", 2000.0)), float(cfg.get("rel_step", 1e-3)))
    if not tr.status.ok:
        raise ExperimentFailed("beam fit did not converge: %s" % tr.status)
    os.makedirs(args.out, exist_ok=True)
    expcli.write_csv(os.path.join(args.out, "beam.csv"), ["n", "theta_cm4", "step_cm4"], rows)


COMMANDS = {"basin": cmd_basin, "mingrid": cmd_mingrid, "rateorder": cmd_rateorder,
            "fem-forward": cmd_fem_forward, "fem-inverse": cmd_fem_inverse,
            "phisweep": cmd_phisweep, "beam": cmd_beam}


def build_parser():
    p = argparse.ArgumentParser(prog="extnewton", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--workers", type=int, default=1, help="threads for grid experiments")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = resolve_seed(args, cfg)
        if args.workers < 1:
            raise expcli.ConfigError("--workers must be at least 1")
        COMMANDS[args.command](args, cfg, seed)
    except (expcli.ConfigError, KeyError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentFailed, ArithmeticError, OSError, ValueError) as exc:
        print("experiment failed: %s" % exc, file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
