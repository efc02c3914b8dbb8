"""Command-line entry point: ``riskrates {sweep,fit,curves,calib-table,dist-check}``.

Exit status is 0 on pass, 2 when a verdict fails, 1 on error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds, harness
from .surrogate import default_table

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    if args.output:
        cfg = harness.ExperimentConfig(**{**cfg.__dict__, "output_dir": args.output})

    def progress(row):
        if not args.quiet:
            print(f"n={row['n']} seed={row['seed']} excess={row['excess_risk']} status={row['status']}",
                  file=sys.stderr)

    rows = harness.run_sweep(cfg, progress)
    failed = sum(r["status"] != "ok" for r in rows)
    print(json.dumps({"rows": len(rows), "failed": failed,
                      "results": str(Path(cfg.output_dir) / harness.RESULTS_FILE)}))
    return EXIT_PASS


def cmd_fit(args) -> int:
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    fit = harness.fit_rate(rows, args.log_correction, args.alpha)
    lower = bounds.RateCurve(args.alpha, kind="lower")
    upper = bounds.RateCurve(args.alpha, kind="upper")
    verdict = harness.compare_to_theory(fit, lower, upper, args.slack)
    monotone, rises = harness.nonincreasing_medians(rows)
    out = {"fit": fit.to_dict(), "verdict": verdict, "nonincreasing": monotone, "rises_at": rises}
    if args.envelope:
        lo, hi = args.envelope
        out["envelope"] = [lo, hi]
        out["envelope_pass"] = harness.band_intersects(fit, lo, hi)
        passed = out["envelope_pass"] and monotone
    else:
        passed = verdict["pass"]
    _emit(out, args.output)
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_curves(args) -> int:
    ns = np.unique(np.geomspace(args.n_min, args.n_max, args.points).round().astype(int))
    curves = [bounds.RateCurve(args.alpha, args.constant, k) for k in ("upper", "lower", "phi_upper")]
    if args.output:
        bounds.write_curves(args.output, curves, ns)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=["n", "value", "kind", "alpha"], lineterminator="\n")
        writer.writeheader()
        for c in curves:
            writer.writerows(c.table(ns))
    return EXIT_PASS


def cmd_calib_table(args) -> int:
    text = default_table().to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_PASS


def cmd_dist_check(args) -> int:
    cfg = harness.load_config(args.config)
    params = cfg.distribution.build()
    res = harness.distribution_check(params, args.n_mc, args.n_cdf, seed=args.seed)
    if args.output:
        harness.write_distribution_check(res, args.output)
    summary = {k: res[k] for k in ("bayes_risk", "bayes_risk_mc", "bayes_risk_se", "bayes_ok", "cdf_ok")}
    print(json.dumps(summary))
    return EXIT_PASS if res["bayes_ok"] and res["cdf_ok"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskrates", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="run a resumable training/evaluation sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--output", help="override the output directory")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fit", help="fit the log-log decay exponent of a sweep table")
    f.add_argument("--input", required=True)
    f.add_argument("--alpha", type=float, required=True)
    f.add_argument("--log-correction", action="store_true")
    f.add_argument("--slack", type=float, default=0.1)
    f.add_argument("--envelope", type=float, nargs=2, metavar=("LO", "HI"),
                   help="pass if the band meets [LO, HI] and medians are nonincreasing")
    f.add_argument("--output")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("curves", help="tabulate theoretical rate curves")
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--n-min", type=float, default=2**7)
    c.add_argument("--n-max", type=float, default=2**14)
    c.add_argument("--points", type=int, default=50)
    c.add_argument("--constant", type=float, default=1.0)
    c.add_argument("--output")
    c.set_defaults(func=cmd_curves)

    t = sub.add_parser("calib-table", help="write the logistic calibration table")
    t.add_argument("--output")
    t.set_defaults(func=cmd_calib_table)

    d = sub.add_parser("dist-check", help="check Bayes risk and margin CDF against Monte Carlo")
    d.add_argument("--config", required=True)
    d.add_argument("--n-mc", type=int, default=1_000_000)
    d.add_argument("--n-cdf", type=int, default=100_000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--output")
    d.set_defaults(func=cmd_dist_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, harness.FitError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
