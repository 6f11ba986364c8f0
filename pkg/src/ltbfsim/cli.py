"""Command line entry point: ``ltbfsim simulate | dump-drop | verify-complexity``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .channel import generate_drop, save_drop
from .config import load_config
from .harness import check_trends, emit, run_sweep, verify_complexity
from .linalg import hermitian_eig
from .ltbf import NullingConfig, estimate_covariances, prepare_design


def _spec(args):
    return load_config(args.config, args.override or ())


def cmd_simulate(args):
    spec = _spec(args)
    result = run_sweep(spec, workers=args.workers)
    for path in emit(result, args.out):
        logging.info("wrote %s", path)
    if not args.check:
        return 0
    outcomes = check_trends(result)
    for o in outcomes:
        print(o.line())
    return 0 if all(o.passed for o in outcomes) else 1


def cmd_dump_drop(args):
    spec = _spec(args)
    cfg = spec.scenario.replace(seed=spec.base_seed)
    drop = generate_drop(cfg, args.drop)
    if args.save:
        save_drop(drop, args.save)
    covs = estimate_covariances(drop)
    spectra = {f"Q{i}": hermitian_eig(c)[0] for i, c in enumerate(covs.Qi)}
    spectra["Q"] = hermitian_eig(covs.Q)[0]
    if covs.Qv is not None:
        spectra["Qv"] = hermitian_eig(covs.Qv)[0]
        design = prepare_design(covs, NullingConfig(True,
                                                    spec.nulling_ranks[0]))
        spectra["Rv"] = hermitian_eig(design.target)[0]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        names = list(spectra)
        w.writerow(["index"] + names)
        for k in range(cfg.n_rx):
            w.writerow([k] + [repr(float(spectra[n][k])) for n in names])
    finally:
        if args.out:
            out.close()
    return 0


def cmd_verify_complexity(args):
    spec = _spec(args)
    report = verify_complexity(q_values=tuple(sorted({1, 2, 4,
                                                      *spec.nulling_ranks})),
                               r=spec.rank, seed=spec.base_seed)
    print(json.dumps(report, indent=2, default=float))
    return 0 if report["pass"] else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="ltbfsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--override", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("simulate", help="run a Monte Carlo sweep")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--check", action="store_true",
                   help="run trend checks; exit 1 if any fails")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dump-drop", help="covariance spectra of one drop")
    common(p)
    p.add_argument("--drop", type=int, default=0)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--save", help="also write the drop's binary blob here")
    p.set_defaults(func=cmd_dump_drop)

    p = sub.add_parser("verify-complexity",
                       help="fit measured flops to complexity models")
    common(p)
    p.set_defaults(func=cmd_verify_complexity)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
