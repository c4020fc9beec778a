"""Command-line front end: ``obslab run|sweep|margin CONFIG``.

Exit codes: 0 success, 1 usage or config error, 2 diverged run,
3 infeasible margin analysis.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .margins import KAPPA1_GRID, analyze
from .report import error_svg, margin_text, run_csv, summary_text, sweep_csv, threshold_text
from .sim import BOTH, DIVERGED, PREDICTIVE, STANDARD, provenance, run, sweep

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2
EXIT_INFEASIBLE = 3

log = logging.getLogger("obslab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        vals = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list is empty")
    return vals


def _kappa1(text):
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("kappa1 must be 'auto' or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("kappa1 must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="obslab", description="Delay-compensating pose observer simulations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("config")
    r.add_argument("--observer", choices=[PREDICTIVE, STANDARD, BOTH], default=PREDICTIVE)
    r.add_argument("--pde-validate", action="store_true", help="co-simulate the ODE-PDE form and record the error norm")
    r.add_argument("--out", default=".", help="output directory")

    s = sub.add_parser("sweep", help="verdict grid over delays and gains")
    s.add_argument("config")
    s.add_argument("--delays", type=_float_list, required=True, help="comma-separated delays [s]")
    s.add_argument("--gains", type=_float_list, required=True, help="comma-separated gains epsilon")
    s.add_argument("--observer", choices=[PREDICTIVE, STANDARD], default=PREDICTIVE)
    s.add_argument("--check-dt-halving", action="store_true", help="repeat the sweep at dt/2 and compare verdicts")
    s.add_argument("--out", default=".")

    m = sub.add_parser("margin", help="delay margin and gain interval")
    m.add_argument("config")
    m.add_argument("--kappa1", type=_kappa1, default="auto", help="'auto' (default) or a positive value")
    m.add_argument("--literal-min", action="store_true", help="use min instead of max in the upper functional bound")
    m.add_argument("--out", default=".")
    return p


def _write(out_dir, name, text):
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def cmd_run(args) -> int:
    sc, _ = load_config(args.config)
    records = run(sc, args.observer, pde_validate=args.pde_validate)
    meta = {"config": os.path.basename(args.config), "observer": args.observer,
            "pde_validate": args.pde_validate, **provenance(sc)}
    os.makedirs(args.out, exist_ok=True)
    _write(args.out, "run.csv", run_csv(records, meta))
    _write(args.out, "run.svg", error_svg(records, title=f"|X_tilde|, D = {sc.delay:g} s, eps = {sc.epsilon:g}"))
    text = summary_text(records, meta)
    _write(args.out, "summary.txt", text)
    print(text, end="")
    return EXIT_DIVERGED if any(r.verdict == DIVERGED for r in records.values()) else EXIT_OK


def cmd_sweep(args) -> int:
    sc, _ = load_config(args.config)
    rows, thresholds = sweep(sc, args.delays, args.gains, args.observer)
    meta = {"config": os.path.basename(args.config), "observer": args.observer, **provenance(sc)}
    os.makedirs(args.out, exist_ok=True)
    _write(args.out, "sweep.csv", sweep_csv(rows, thresholds, meta))
    print(threshold_text(thresholds), end="")
    if args.check_dt_halving:
        half = replace(sc, dt=sc.dt / 2)
        rows2, thr2 = sweep(half, args.delays, args.gains, args.observer)
        _write(args.out, "sweep_dt_half.csv", sweep_csv(rows2, thr2, {**meta, **provenance(half)}))
        changed = [(a["delay"], a["epsilon"], a["verdict"], b["verdict"])
                   for a, b in zip(rows, rows2) if a["verdict"] != b["verdict"]]
        if changed:
            for d, e, v1, v2 in changed:
                print(f"dt halving changed verdict at D={d:g}, eps={e:g}: {v1} -> {v2}")
        else:
            print("dt halving: all verdicts unchanged")
    return EXIT_OK


def cmd_margin(args) -> int:
    sc, opts = load_config(args.config)
    kappa1 = args.kappa1 if args.kappa1 is not None else opts["kappa1"]
    horizon = opts["horizon"] or sc.t_end
    literal_min = args.literal_min or opts["literal_min"]
    report = analyze(sc.c, sc.sigma, sc.epsilon, sc.delay, sc.omega_profile, sc.dt, horizon,
                     kappa1=kappa1, p0=sc.p0, literal_min=literal_min)
    meta = {
        "config": os.path.basename(args.config),
        "kappa1_mode": "auto" if kappa1 is None else "fixed",
        "kappa1_grid": f"logspace({math.log10(KAPPA1_GRID[0]):g}, {math.log10(KAPPA1_GRID[-1]):g}, {len(KAPPA1_GRID)})",
        "horizon_s": horizon,
        "literal_min": literal_min,
        **provenance(sc),
    }
    text = margin_text(report, meta)
    os.makedirs(args.out, exist_ok=True)
    _write(args.out, "margin.txt", text)
    print(text, end="")
    feasible = report.feasible and not math.isnan(report.d_max)
    return EXIT_OK if feasible else EXIT_INFEASIBLE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "margin": cmd_margin}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
